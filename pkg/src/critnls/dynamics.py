"""Time evolution of ``i u_t + Delta u + mu |u|^(q-2) u + |u|^(2*-2) u = 0`` on the periodic box.

* :func:`free_propagate` multiplies the Fourier coefficients by ``exp(-i t |k|^2)``.
* :func:`evolve_splitstep` is the Strang splitting ``N(dt/2) L(dt) N(dt/2)``.
  The nonlinear substep ``u -> u exp(i tau (mu |u|^(q-2) + |u|^(2*-2)))``
  leaves ``|u|`` unchanged, so it is exact and two consecutive half steps
  merge into one full step.
* :func:`picard_iterate` iterates the Duhamel map
  ``Phi(u)(t) = e^(it Delta) phi + i int_0^t e^(i(t-s) Delta) g(u(s)) ds``
  with a left-endpoint rectangle rule in time.
* Space-time norms are ``L^p_t L^r_x`` (``Y``) and ``L^p_t W^(1,r)_x`` (``X``)
  over admissible pairs ``2/p + N/r = N/2``.  Time integrals use Simpson's
  rule.

Every transform is a single-threaded pocketfft call, so results are bitwise
reproducible; traces record this in their metadata.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .errors import GridMismatchError, ParameterError
from .field import BoxGrid, FieldState, functionals, orbit_distance
from .landscape import ModelParams

log = logging.getLogger(__name__)

FFT_WORKERS = 1


def _require_box(phi: FieldState) -> BoxGrid:
    if phi.grid.kind != "box":
        raise GridMismatchError("time evolution runs on box grids only; transfer radial fields with to_box")
    return phi.grid


# ---------------------------------------------------------------------------
# admissible pairs


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


@dataclass(frozen=True)
class AdmissiblePair:
    """Exponents ``(p, r)`` with ``2/p + N/r = N/2``, stored as exact rationals."""

    N: int
    p: Fraction
    r: Fraction

    def __post_init__(self):
        p, r = _as_fraction(self.p), _as_fraction(self.r)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        if p < 2 or r < 2:
            raise ParameterError(f"admissible exponents must be at least 2, got p={p}, r={r}")
        if Fraction(2) / p + Fraction(self.N) / r != Fraction(self.N, 2):
            raise ParameterError(f"(p, r) = ({p}, {r}) violates 2/p + N/r = N/2 for N={self.N}")

    @property
    def pf(self) -> float:
        return float(self.p)

    @property
    def rf(self) -> float:
        return float(self.r)

    def identity_defect(self) -> Fraction:
        """``2/p + N/r - N/2``; zero by construction."""
        return Fraction(2) / self.p + Fraction(self.N) / self.r - Fraction(self.N, 2)


def admissible_pair(N: int, alpha) -> tuple[AdmissiblePair, Fraction]:
    """The pair attached to the power ``alpha`` and the exponent ``sigma`` of ``T``.

    ``p = 4 alpha / ((alpha - 2)(N - 2))``, ``r = N alpha / (alpha + N - 2)`` and
    ``sigma = (N - 2)(2* - alpha) / 4``.  Arithmetic is exact: a float
    ``alpha`` is converted to the rational it represents.
    """
    if int(N) != N or N < 3:
        raise ParameterError(f"admissible pairs need N >= 3, got {N}")
    N = int(N)
    a = _as_fraction(alpha)
    crit = Fraction(2 * N, N - 2)
    if not Fraction(2) < a <= crit:
        raise ParameterError(f"alpha must lie in (2, 2*] = (2, {crit}], got {alpha}")
    p = 4 * a / ((a - 2) * (N - 2))
    r = N * a / (a + N - 2)
    sigma = (N - 2) * (crit - a) / 4
    return AdmissiblePair(N, p, r), sigma


# ---------------------------------------------------------------------------
# linear flow


def free_propagate(phi: FieldState, t: float) -> FieldState:
    """``e^(it Delta) phi``: multiply each Fourier mode by ``exp(-i t |k|^2)``."""
    g = _require_box(phi)
    if t == 0:
        return phi
    return phi.with_values(g.ifft(np.exp(-1j * t * g.k2) * g.fft(phi.values)))


def _gradient_modulus(g: BoxGrid, uh) -> np.ndarray:
    """``|grad u|`` from the Fourier coefficients ``uh``."""
    out = np.zeros(g.shape)
    for axis in range(g.N):
        shape = [1] * g.N
        shape[axis] = g.n
        d = g.ifft(1j * g.k.reshape(shape) * uh)
        out += d.real ** 2 + d.imag ** 2
    return np.sqrt(out)


def lebesgue_norm(g: BoxGrid, values, r: float) -> float:
    """``||u||_(L^r)`` by the box rule, scaled to avoid over- and underflow."""
    a = np.abs(values)
    top = float(a.max()) if a.size else 0.0
    if top == 0:
        return 0.0
    return top * (float(np.sum((a / top) ** r)) * g.cell) ** (1.0 / r)


def sobolev_norm(g: BoxGrid, values, r: float, uh=None) -> float:
    """``||u||_(L^r) + ||grad u||_(L^r)`` with spectral derivatives."""
    uh = g.fft(values) if uh is None else uh
    return lebesgue_norm(g, values, r) + lebesgue_norm(g, _gradient_modulus(g, uh), r)


def time_norm(values, times, p: float) -> float:
    """``(int |f(t)|^p dt)^(1/p)`` by Simpson's rule on the sample times."""
    f = np.abs(np.asarray(values, dtype=float))
    times = np.asarray(times, dtype=float)
    if math.isinf(p):
        return float(f.max())
    top = float(f.max()) if f.size else 0.0
    if top == 0:
        return 0.0
    return top * float(simpson((f / top) ** p, x=times)) ** (1.0 / p)


def _free_space_norms(phi: FieldState, rs, T: float, time_nodes: int):
    """Sample times and, per exponent ``r``, ``||u(t)||_r`` and ``||grad u(t)||_r`` of the free flow."""
    g = _require_box(phi)
    if not T > 0:
        raise ParameterError("T must be positive")
    if time_nodes < 3:
        raise ParameterError("at least three time nodes are needed")
    times = np.linspace(0.0, T, time_nodes)
    ph = g.fft(phi.values)
    lr = np.zeros((len(rs), time_nodes))
    dr = np.zeros((len(rs), time_nodes))
    for j, t in enumerate(times):
        uh = np.exp(-1j * t * g.k2) * ph
        u = g.ifft(uh)
        du = _gradient_modulus(g, uh)
        for i, r in enumerate(rs):
            lr[i, j] = lebesgue_norm(g, u, r)
            dr[i, j] = lebesgue_norm(g, du, r)
    return times, lr, dr


def strichartz_norm(phi: FieldState, pair: AdmissiblePair, T: float,
                    time_nodes: int = 65) -> tuple[float, float]:
    """``Y`` and ``X`` norms of the free evolution ``e^(it Delta) phi`` over ``[0, T]``.

    ``Y = ||.||_(L^p(0,T; L^r))`` and ``X = ||.||_(L^p(0,T; W^(1,r)))``; the
    time integral uses Simpson's rule on ``time_nodes`` equally spaced nodes.
    """
    if phi.grid.N != pair.N:
        raise GridMismatchError("pair and grid dimensions differ")
    times, lr, dr = _free_space_norms(phi, [pair.rf], T, time_nodes)
    return time_norm(lr[0], times, pair.pf), time_norm(lr[0] + dr[0], times, pair.pf)


@dataclass(frozen=True)
class StrichartzReport:
    T: float
    pair_q: AdmissiblePair
    pair_crit: AdmissiblePair
    sigma_q: Fraction
    sigma_crit: Fraction
    Y_q: float
    X_q: float
    Y_crit: float
    X_crit: float

    @property
    def Y_T(self) -> float:
        return self.Y_q + self.Y_crit

    @property
    def X_T(self) -> float:
        return self.X_q + self.X_crit

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            "pair_q": [str(self.pair_q.p), str(self.pair_q.r)],
            "pair_crit": [str(self.pair_crit.p), str(self.pair_crit.r)],
            "sigma_q": str(self.sigma_q),
            "sigma_crit": str(self.sigma_crit),
            "Y_q": self.Y_q, "X_q": self.X_q,
            "Y_crit": self.Y_crit, "X_crit": self.X_crit,
            "Y_T": self.Y_T, "X_T": self.X_T,
        }


def solution_pairs(params: ModelParams):
    """The two pairs used for solutions: ``alpha = q`` and ``alpha = 2*``."""
    pq, sq = admissible_pair(params.N, params.q)
    pc, sc = admissible_pair(params.N, Fraction(2 * params.N, params.N - 2))
    return (pq, sq), (pc, sc)


def strichartz_report(phi: FieldState, params: ModelParams, T: float,
                      time_nodes: int = 65) -> StrichartzReport:
    """Both pair norms of the free evolution of ``phi`` from one pass over the time nodes."""
    (pq, sq), (pc, sc) = solution_pairs(params)
    if phi.grid.N != params.N:
        raise GridMismatchError("grid and model dimensions differ")
    times, lr, dr = _free_space_norms(phi, [pq.rf, pc.rf], T, time_nodes)
    yq, xq = time_norm(lr[0], times, pq.pf), time_norm(lr[0] + dr[0], times, pq.pf)
    yc, xc = time_norm(lr[1], times, pc.pf), time_norm(lr[1] + dr[1], times, pc.pf)
    return StrichartzReport(float(T), pq, pc, sq, sc, yq, xq, yc, xc)


def trajectory_norm(g: BoxGrid, samples, times, pairs, derivative: bool = False) -> float:
    """Sum over ``pairs`` of the ``L^p_t L^r_x`` (or ``W^(1,r)``) norm of sampled ``u(t)``."""
    total = 0.0
    for pair in pairs:
        per_t = []
        for u in samples:
            if derivative:
                per_t.append(sobolev_norm(g, u, pair.rf))
            else:
                per_t.append(lebesgue_norm(g, u, pair.rf))
        total += time_norm(per_t, times, pair.pf)
    return total


# ---------------------------------------------------------------------------
# split-step evolution


def _phase_rotation(v, params: ModelParams, tau: float):
    a2 = v.real ** 2 + v.imag ** 2
    pot = params.mu * a2 ** ((params.q - 2) / 2) + a2 ** ((params.crit - 2) / 2)
    return v * np.exp(1j * tau * pot)


@dataclass(frozen=True, eq=False)
class EvolutionTrace:
    """Samples of a split-step run.

    ``dist`` is NaN when no reference orbit was given.  ``cap_flags[i]`` is
    true when ``grad[i] >= rho0`` (all false when no ``rho0`` was given).
    """

    times: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    grad: np.ndarray
    dist: np.ndarray
    cap_flags: np.ndarray
    dt: float
    steps: int
    final: FieldState
    blowup: bool = False
    message: str = ""
    metadata: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def mass_drift(self) -> float:
        m0 = self.mass[0]
        return float(np.max(np.abs(self.mass - m0)) / m0) if m0 > 0 else 0.0

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        dev = float(np.max(np.abs(self.energy - e0)))
        return dev / abs(e0) if e0 != 0 else dev

    def rows(self):
        for row in zip(self.times, self.mass, self.energy, self.grad, self.dist):
            yield tuple(float(x) for x in row)

    @classmethod
    def empty(cls, final: FieldState, dt: float = 0.0) -> "EvolutionTrace":
        z = np.zeros(0)
        return cls(z, z, z, z, z, np.zeros(0, dtype=bool), dt, 0, final)


def evolve_splitstep(phi: FieldState, params: ModelParams, T: float, dt: float,
                     stride: int = 10, ceiling: float | None = None,
                     reference: FieldState | None = None,
                     rho0: float | None = None,
                     on_sample: Callable[[int, FieldState], None] | None = None) -> EvolutionTrace:
    """Strang split-step solution on ``[0, T]`` sampled every ``stride`` steps.

    The step count is ``ceil(T / dt)`` (up to rounding), and the step actually
    used, ``T / steps``, is recorded.  The run stops early with ``blowup=True``
    if a sample is not finite or its ``||grad u||^2`` exceeds ``ceiling``; the
    trace then ends at the last good sample.  ``on_sample(index, field)`` is
    called for every recorded sample.
    """
    g = _require_box(phi)
    if phi.grid.N != params.N:
        raise GridMismatchError("grid and model dimensions differ")
    if not T > 0 or not dt > 0:
        raise ParameterError("T and dt must be positive")
    if stride < 1:
        raise ParameterError("stride must be at least 1")
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / steps
    prop = np.exp(-1j * h * g.k2)

    times, mass, energy, grad, dist, caps = [], [], [], [], [], []
    last = phi
    blowup, message = False, ""

    def record(t, v) -> bool:
        nonlocal last, blowup, message
        if not np.all(np.isfinite(v)):
            blowup, message = True, f"non-finite field at t={t:.6g}"
            return False
        u = FieldState(g, v)
        rep = functionals(u, params)
        if ceiling is not None and rep.grad > ceiling:
            blowup, message = True, f"gradient norm {rep.grad:.6g} above ceiling {ceiling:.6g} at t={t:.6g}"
            return False
        times.append(t)
        mass.append(rep.mass)
        energy.append(rep.energy)
        grad.append(rep.grad)
        dist.append(orbit_distance(u, reference) if reference is not None else math.nan)
        caps.append(rho0 is not None and rep.grad >= rho0)
        last = u
        if on_sample is not None:
            on_sample(len(times) - 1, u)
        return True

    v = np.array(phi.values)
    record(0.0, v)
    if not blowup:
        v = _phase_rotation(v, params, h / 2)
        for n in range(1, steps + 1):
            v = g.ifft(prop * g.fft(v))
            if n % stride == 0 or n == steps:
                v = _phase_rotation(v, params, h / 2)
                if not record(n * h, v):
                    break
                if n < steps:
                    v = _phase_rotation(v, params, h / 2)
            else:
                v = _phase_rotation(v, params, h)
    if blowup:
        log.warning("split-step run halted: %s", message)
    meta = {"fft_workers": FFT_WORKERS, "stride": stride, "T": float(T)}
    return EvolutionTrace(np.array(times), np.array(mass), np.array(energy), np.array(grad),
                          np.array(dist), np.array(caps, dtype=bool), h, steps, last,
                          blowup, message, meta)


# ---------------------------------------------------------------------------
# Picard iteration of the Duhamel map


@dataclass(frozen=True, eq=False)
class PicardResult:
    """Iterates ``u_0 = e^(it Delta) phi``, ``u_(k+1) = Phi(u_k)``.

    ``distances[k] = ||u_(k+1) - u_k||_(Y_T)`` and ``ratios[k] =
    distances[k+1] / distances[k]``.  ``iterates[k]`` is ``u_k(T)``;
    ``trajectory`` holds the samples of the last iterate at ``times``.
    """

    times: np.ndarray
    distances: list
    ratios: list
    iterates: list
    trajectory: np.ndarray
    converged: bool
    diverged: bool
    message: str

    @property
    def final(self) -> FieldState:
        return self.iterates[-1]


def _nonlinearity(v, params: ModelParams):
    a2 = v.real ** 2 + v.imag ** 2
    return (params.mu * a2 ** ((params.q - 2) / 2) + a2 ** ((params.crit - 2) / 2)) * v


def picard_iterate(phi: FieldState, params: ModelParams, T: float, k_max: int,
                   dt: float = 2.5e-3, tol: float = 1e-13) -> PicardResult:
    """Iterate the Duhamel map up to ``k_max`` times on the time grid ``j * dt``.

    The Duhamel integral ``I(t) = int_0^t e^(i(t-s) Delta) g(u(s)) ds`` is
    accumulated by ``I_(j+1) = e^(i dt Delta) (I_j + dt g(u(t_j)))``.
    Iteration stops when ``d_k <= tol * max(1, ||u_(k+1)||_(Y_T))``, and is
    declared divergent after three consecutive ratios ``>= 1``.
    """
    g = _require_box(phi)
    if not T > 0 or not dt > 0:
        raise ParameterError("T and dt must be positive")
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / steps
    times = np.arange(steps + 1) * h
    prop = np.exp(-1j * h * g.k2)
    pairs = [pq for pq, _ in solution_pairs(params)]

    ph = g.fft(phi.values)
    free = np.empty((steps + 1,) + g.shape, dtype=complex)
    for j, t in enumerate(times):
        free[j] = g.ifft(np.exp(-1j * t * g.k2) * ph)

    current = free
    iterates = [FieldState(g, current[-1])]
    distances, ratios = [], []
    converged = diverged = False
    message = "iteration budget exhausted"
    streak = 0
    for k in range(k_max):
        nxt = np.empty_like(current)
        Ih = np.zeros(g.shape, dtype=complex)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            for j in range(steps + 1):
                nxt[j] = free[j] + 1j * g.ifft(Ih)
                if j < steps:
                    Ih = prop * (Ih + h * g.fft(_nonlinearity(current[j], params)))
        if not np.all(np.isfinite(nxt)):
            diverged, message = True, f"non-finite iterate at k={k + 1}"
            break
        with np.errstate(over="ignore", invalid="ignore"):
            d = trajectory_norm(g, nxt - current, times, pairs)
            scale = trajectory_norm(g, nxt, times, pairs)
        distances.append(d)
        if len(distances) > 1:
            prev = distances[-2]
            ratios.append(d / prev if prev > 0 else (0.0 if d == 0 else math.inf))
            streak = streak + 1 if ratios[-1] >= 1 else 0
        current = nxt
        iterates.append(FieldState(g, current[-1]))
        if d <= tol * max(1.0, scale):
            converged, message = True, f"converged after {k + 1} iterates"
            break
        if streak >= 3:
            diverged, message = True, f"three consecutive ratios >= 1 up to k={k + 1}"
            break
    if diverged:
        log.warning("Picard iteration diverged: %s", message)
    return PicardResult(times, distances, ratios, iterates, current, converged, diverged, message)


# ---------------------------------------------------------------------------
# two independent solvers as mutual oracles


@dataclass(frozen=True)
class TwoSolverCheck:
    """``L^2`` gap at ``T`` between the Picard limit and the split-step solution.

    ``tolerance = 2 * (picard_error + splitstep_error + iteration_error)``
    where the error estimates are: twice the step-halving change of the
    first-order Picard quadrature, 4/3 of the step-halving change of the
    second-order splitting, and the geometric tail ``delta r / (1 - r)`` of
    the last ``L^2`` Picard increment ``delta`` at ``T`` with the last ratio ``r``.
    """

    gap: float
    tolerance: float
    picard_error: float
    splitstep_error: float
    iteration_error: float
    nonlinear_effect: float

    @property
    def agrees(self) -> bool:
        return self.gap <= self.tolerance


def _l2(g: BoxGrid, v) -> float:
    return math.sqrt(g.integrate(np.abs(v) ** 2))


def picard_vs_splitstep(phi: FieldState, params: ModelParams, T: float, dt: float,
                        k_max: int = 30) -> TwoSolverCheck:
    g = _require_box(phi)
    p1 = picard_iterate(phi, params, T, k_max, dt)
    p2 = picard_iterate(phi, params, T, k_max, dt / 2)
    s1 = evolve_splitstep(phi, params, T, dt, stride=10 ** 9)
    s2 = evolve_splitstep(phi, params, T, dt / 2, stride=10 ** 9)
    e_p = 2 * _l2(g, p1.final.values - p2.final.values)
    e_s = 4 / 3 * _l2(g, s1.final.values - s2.final.values)
    last_step = _l2(g, p1.iterates[-1].values - p1.iterates[-2].values)
    r = p1.ratios[-1] if p1.ratios else 0.0
    e_k = last_step * r / (1 - r) if r < 1 else last_step
    gap = _l2(g, p1.final.values - s1.final.values)
    effect = _l2(g, p1.final.values - free_propagate(phi, T).values)
    return TwoSolverCheck(gap, 2 * (e_p + e_s + e_k), e_p, e_s, e_k, effect)
