"""Orbital-stability experiments around a computed ground state.

A ground state ``u_c`` on a box grid is perturbed (:class:`PerturbationSpec`),
evolved with the split-step integrator in fixed-length windows, and the
``H^1`` distance to the orbit ``{e^(i theta) u_c(. - y)}`` is tracked together
with the gradient cap ``||grad u||^2 < rho0``.

The distance is to the orbit of the single computed minimiser; the set of all
minimisers may be larger, so reports carry that caveat, and a run whose
distance settles at a positive level is flagged as a candidate second orbit
rather than counted as a failure.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq

from .dynamics import EvolutionTrace, evolve_splitstep, strichartz_report
from .errors import DomainError, GridMismatchError, ParameterError
from .field import BoxGrid, FieldState, dilate, functionals, orbit_distance
from .ground_state import GroundStateResult
from .landscape import LandscapeConstants, ModelParams
from .tolerances import TOL

log = logging.getLogger(__name__)

KINDS = ("random-H1", "dilation", "phase-ramp", "translate-bump")
ORBIT_CAVEAT = "distance to the orbit of a single computed minimiser, not to the full set of minimisers"


# ---------------------------------------------------------------------------
# perturbations


def _h1(v: FieldState) -> float:
    return v.h1_norm()


def _solve_size(fn, delta: float, hi: float) -> float:
    """Smallest positive parameter ``a`` (bracketed by ``hi``) with ``fn(a) = delta``."""
    while fn(hi) < delta:
        hi *= 2
        if hi > 1e6:
            raise DomainError(f"cannot reach perturbation size {delta}")
    return brentq(lambda a: fn(a) - delta, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=200)


@dataclass(frozen=True)
class PerturbationSpec:
    """How to perturb a ground state: ``kind`` in :data:`KINDS`, ``H^1`` size ``delta``, ``seed``.

    * ``random-H1``: ``u_c + delta w`` with ``w`` random band-limited noise
      (the 8 lowest modes per axis), normalised to ``||w||_H = 1``.
    * ``dilation``: ``s^(N/2) u_c(s x)`` with ``s > 1`` chosen so the change has size ``delta``.
    * ``phase-ramp``: ``u_c exp(i kappa x_1)`` with ``kappa`` chosen likewise.
    * ``translate-bump``: ``u_c`` moved by a seeded sub-cell shift plus a
      Gaussian bump of size ``delta`` centred a quarter box away, where it
      barely overlaps the ground state.
    """

    kind: str = "random-H1"
    delta: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown perturbation kind {self.kind!r}; expected one of {KINDS}")
        if not self.delta >= 0 or not math.isfinite(self.delta):
            raise ParameterError("delta must be a nonnegative number")

    def build(self, u: FieldState) -> tuple[FieldState, float]:
        """The perturbed datum and the achieved perturbation size."""
        if u.grid.kind != "box":
            raise GridMismatchError("perturbations are built on box grids")
        if self.delta == 0:
            return u, 0.0
        rng = np.random.default_rng(self.seed)
        g = u.grid
        if self.kind == "random-H1":
            w = _band_limited_noise(g, rng)
            w = w * (1.0 / _h1(w))
            phi = u + w * self.delta
            return phi, _h1(w * self.delta)
        if self.kind == "dilation":
            s = 1 + _solve_size(lambda a: _h1(dilate(u, 1 + a) - u), self.delta, 1e-2)
            phi = dilate(u, s)
            return phi, _h1(phi - u)
        if self.kind == "phase-ramp":
            x1 = g.mesh()[0]

            def ramp(kappa):
                return u.with_values(u.values * np.exp(1j * kappa * x1))

            kappa = _solve_size(lambda a: _h1(ramp(a) - u), self.delta, 1e-2)
            phi = ramp(kappa)
            return phi, _h1(phi - u)
        # translate-bump
        shift = rng.uniform(-0.5, 0.5, size=g.N) * g.dx
        ks = np.meshgrid(*([g.k] * g.N), indexing="ij", sparse=True)
        moved = u.with_values(g.ifft(g.fft(u.values) * np.exp(-1j * sum(k * y for k, y in zip(ks, shift)))))
        direction = rng.standard_normal(g.N)
        centre = direction / np.linalg.norm(direction) * g.L / 4
        width = max(4 * g.dx, g.L / 32)
        d2 = sum((m - c) ** 2 for m, c in zip(g.mesh(), centre))
        bump = FieldState(g, np.exp(-d2 / width ** 2) * np.exp(2j * np.pi * rng.uniform()))
        bump = bump * (self.delta / _h1(bump))
        return moved + bump, _h1(bump)


def _band_limited_noise(g: BoxGrid, rng: np.random.Generator, modes: int = 8) -> FieldState:
    """Complex noise supported on the ``modes`` lowest Fourier indices per axis."""
    idx = np.arange(-(modes // 2), modes - modes // 2)
    coeff = rng.standard_normal((modes,) * g.N) + 1j * rng.standard_normal((modes,) * g.N)
    spec = np.zeros(g.shape, dtype=complex)
    spec[np.ix_(*([idx % g.n] * g.N))] = coeff
    return FieldState(g, g.ifft(spec))


# ---------------------------------------------------------------------------
# single experiment


@dataclass(frozen=True, eq=False)
class StabilityReport:
    delta: float
    seed: int
    kind: str
    T_sim: float
    dt: float
    achieved_delta: float
    initial_distance: float
    sup_distance: float
    mass_drift: float
    energy_drift: float
    max_grad_ratio: float
    cap_violated: bool
    blowup: bool
    windows_completed: int
    windows_requested: int
    trapping_hypotheses: bool
    candidate_second_orbit: bool
    message: str = ""
    caveat: str = ORBIT_CAVEAT
    trace: EvolutionTrace | None = dc_field(default=None, repr=False)

    @property
    def complete(self) -> bool:
        return self.windows_completed == self.windows_requested and not self.blowup

    def row(self) -> dict:
        return {
            "delta": self.delta, "seed": self.seed, "kind": self.kind, "T_sim": self.T_sim,
            "dt": self.dt, "achieved_delta": self.achieved_delta,
            "initial_distance": self.initial_distance, "sup_distance": self.sup_distance,
            "mass_drift": self.mass_drift, "energy_drift": self.energy_drift,
            "max_grad_ratio": self.max_grad_ratio, "cap_violated": int(self.cap_violated),
            "blowup": int(self.blowup), "windows_completed": self.windows_completed,
            "windows_requested": self.windows_requested,
            "trapping_hypotheses": int(self.trapping_hypotheses),
            "candidate_second_orbit": int(self.candidate_second_orbit),
        }


def _concat(traces: list[EvolutionTrace], offsets: list[float]) -> EvolutionTrace:
    parts = {name: [] for name in ("times", "mass", "energy", "grad", "dist", "cap_flags")}
    for i, (tr, t0) in enumerate(zip(traces, offsets)):
        sl = slice(0, None) if i == 0 else slice(1, None)  # window starts repeat the previous end
        parts["times"].append(tr.times[sl] + t0)
        for name in ("mass", "energy", "grad", "dist", "cap_flags"):
            parts[name].append(getattr(tr, name)[sl])
    last = traces[-1]
    joined = {k: np.concatenate(v) for k, v in parts.items()}
    return EvolutionTrace(joined["times"], joined["mass"], joined["energy"], joined["grad"],
                          joined["dist"], joined["cap_flags"], last.dt,
                          sum(t.steps for t in traces), last.final, last.blowup, last.message,
                          dict(last.metadata))


def _plateau(times, dist, window: float, initial: float) -> bool:
    """Distance over the last window stays within 10% of its mean, above twice the initial distance."""
    if len(times) < 3 or not np.all(np.isfinite(dist)):
        return False
    tail = dist[times >= times[-1] - window]
    mean = float(np.mean(tail))
    return mean > 2 * max(initial, 1e-300) and float(np.max(np.abs(tail - mean))) <= 0.1 * mean


def run_stability_experiment(gs: GroundStateResult, spec: PerturbationSpec, params: ModelParams,
                             constants: LandscapeConstants, T_sim: float = 10.0, dt: float = 0.005,
                             window: float = 0.5, sample_interval: float = 0.1,
                             ceiling: float | None = None) -> StabilityReport:
    """Evolve ``u_c`` perturbed by ``spec`` for ``T_sim`` in windows of length ``window``.

    The run stops after the first window in which a sample is not finite,
    exceeds the gradient ``ceiling`` (default ``10 rho0``) or breaks the cap
    ``||grad u||^2 < rho0`` by more than the cap drift tolerance.
    """
    if not gs.converged:
        raise DomainError("the ground state did not converge; refusing to use it as an orbit")
    u = gs.field
    if u.grid.kind != "box":
        raise GridMismatchError("stability runs need a box ground state (see polish_on_box)")
    if not T_sim > 0 or not dt > 0 or not window > 0:
        raise ParameterError("T_sim, dt and window must be positive")
    rho0 = constants.rho0
    cap = rho0 * (1 + TOL.cap_drift_rel)
    ceiling = 10 * rho0 if ceiling is None else ceiling
    stride = max(1, int(round(sample_interval / dt)))

    phi, achieved = spec.build(u)
    rep0 = functionals(phi, params)
    hypotheses = rep0.mass < constants.c0 and rep0.energy < 0 and rep0.grad < rho0
    if not hypotheses:
        log.warning("perturbed datum leaves the trapping region: mass=%g energy=%g grad=%g",
                    rep0.mass, rep0.energy, rep0.grad)

    n_windows = max(1, int(math.ceil(T_sim / window - 1e-9)))
    traces, offsets = [], []
    state, t0 = phi, 0.0
    completed = 0
    cap_violated = blowup = False
    message = ""
    for w in range(n_windows):
        length = min(window, T_sim - t0) if w < n_windows - 1 else T_sim - t0
        tr = evolve_splitstep(state, params, length, dt, stride=stride, ceiling=ceiling,
                              reference=u, rho0=rho0)
        traces.append(tr)
        offsets.append(t0)
        if tr.blowup:
            blowup, message = True, tr.message
            break
        if np.any(tr.grad >= cap):
            cap_violated = True
            message = f"gradient cap exceeded in window {w + 1}: max grad/rho0 = {tr.grad.max() / rho0:.8g}"
            break
        completed += 1
        state, t0 = tr.final, t0 + length
    trace = _concat(traces, offsets)
    initial = float(trace.dist[0]) if len(trace) else math.nan
    report = StabilityReport(
        delta=spec.delta, seed=spec.seed, kind=spec.kind, T_sim=float(T_sim), dt=trace.dt,
        achieved_delta=achieved, initial_distance=initial,
        sup_distance=float(np.max(trace.dist)) if len(trace) else math.nan,
        mass_drift=trace.mass_drift if len(trace) else math.nan,
        energy_drift=trace.energy_drift if len(trace) else math.nan,
        max_grad_ratio=float(np.max(trace.grad) / rho0) if len(trace) else math.nan,
        cap_violated=cap_violated, blowup=blowup, windows_completed=completed,
        windows_requested=n_windows, trapping_hypotheses=hypotheses,
        candidate_second_orbit=spec.delta > 0 and _plateau(trace.times, trace.dist, window, initial),
        message=message or "completed", trace=trace)
    log.info("stability run delta=%g seed=%d: sup distance %.3e", spec.delta, spec.seed, report.sup_distance)
    return report


# ---------------------------------------------------------------------------
# delta sweep


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Reports ordered by ``(delta, seed)`` and the worst sup distance per ``delta``.

    ``worst`` lists ``(delta, worst sup distance)`` for decreasing ``delta``;
    ``trend_ok`` records whether each entry is at most ``1 + slack`` times
    the previous one (recorded, not enforced).
    """

    reports: list
    worst: list
    trend_ok: bool
    slack: float

    def __iter__(self):
        return iter(self.reports)

    def __len__(self):
        return len(self.reports)

    @property
    def any_blowup(self) -> bool:
        return any(r.blowup for r in self.reports)

    @property
    def any_cap_violation(self) -> bool:
        return any(r.cap_violated for r in self.reports)


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Distinct per-trial seeds drawn from one master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(trials)]


def _run(args):
    return run_stability_experiment(*args[0], **args[1])


def sweep_delta(gs: GroundStateResult, deltas, params: ModelParams, constants: LandscapeConstants,
                T_sim: float = 10.0, dt: float = 0.005, trials: int = 3, seed: int = 0,
                kind: str = "random-H1", workers: int = 1, slack: float = TOL.trend_slack,
                **run_options) -> SweepResult:
    """Run ``trials`` seeded experiments for each ``delta`` (positive, strictly decreasing)."""
    deltas = [float(d) for d in deltas]
    if any(not d > 0 for d in deltas):
        raise ParameterError("deltas must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ParameterError("deltas must be strictly decreasing")
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    if not deltas:
        return SweepResult([], [], True, slack)
    seeds = trial_seeds(seed, trials)
    jobs = [((gs, PerturbationSpec(kind, d, s), params, constants, T_sim, dt), run_options)
            for d in deltas for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run, jobs))
    else:
        reports = [_run(j) for j in jobs]
    reports.sort(key=lambda r: (r.delta, r.seed))
    worst = []
    for d in deltas:
        sups = [r.sup_distance for r in reports if r.delta == d]
        worst.append((d, max(sups)))
    trend = all(b <= (1 + slack) * a for (_, a), (_, b) in zip(worst, worst[1:]))
    return SweepResult(reports, worst, trend, slack)


# ---------------------------------------------------------------------------
# continuation by repeated local windows


@dataclass(frozen=True)
class ProbeReport:
    """Per-window ``X_T`` of the free flow of the current state against ``gamma0``."""

    window: float
    gamma0: float
    x_norms: list
    passed: list
    continuation: bool
    message: str


def local_window_probe(phi: FieldState, params: ModelParams, constants: LandscapeConstants,
                       gs: GroundStateResult, window: float = 0.05, windows: int = 4,
                       gamma0: float = 4.0, max_distance: float | None = None,
                       dt: float = 0.005, time_nodes: int = 33) -> ProbeReport:
    """Check the small-data condition window by window, evolving between checks.

    ``gamma0`` is a configured threshold.  ``phi`` must lie within
    ``max_distance`` (default half the ``H^1`` norm of the ground state) of the
    ground-state orbit; otherwise :class:`DomainError` is raised.
    """
    if windows < 0:
        raise ParameterError("window count must be nonnegative")
    if not window > 0 or not gamma0 > 0:
        raise ParameterError("window and gamma0 must be positive")
    limit = 0.5 * gs.field.h1_norm() if max_distance is None else max_distance
    d = orbit_distance(phi, gs.field)
    if d > limit:
        raise DomainError(f"datum is {d:.6g} from the ground-state orbit, beyond the gate {limit:.6g}")
    x_norms, passed = [], []
    state = phi
    message = "all windows passed" if windows else "no windows requested"
    for w in range(windows):
        x = strichartz_report(state, params, window, time_nodes).X_T
        x_norms.append(x)
        passed.append(x <= gamma0)
        if x > gamma0:
            message = f"window {w + 1}: X_T = {x:.6g} exceeds gamma0 = {gamma0:.6g}"
            break
        if w < windows - 1:
            tr = evolve_splitstep(state, params, window, dt, stride=10 ** 9)
            if tr.blowup:
                passed[-1] = False
                message = f"window {w + 1}: {tr.message}"
                break
            state = tr.final
    return ProbeReport(window, gamma0, x_norms, passed, all(passed), message)
