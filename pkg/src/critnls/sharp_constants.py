"""Sharp Sobolev and Gagliardo-Nirenberg constants.

The Sobolev constant ``S`` is the best constant in ``S ||f||_{2*}^2 <= ||grad f||_2^2``
and is read off the Aubin-Talenti extremal by radial quadrature.  The
Gagliardo-Nirenberg constant ``C_{N,q}`` in
``||f||_q <= C ||grad f||_2^beta ||f||_2^(1-beta)`` is realised by the positive
radial solution of ``-Q'' - (N-1)Q'/r + Q = Q^(q-1)``, which we obtain by
shooting on ``Q(0)``.
"""
from __future__ import annotations

import math
import os
import tempfile
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import kve

from .errors import ParameterError, ResolutionError, ShootingError
from .tolerances import TOL


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def critical_exponent(N: int) -> float:
    return 2.0 * N / (N - 2)


def gn_beta(N: int, q: float) -> float:
    return N * (0.5 - 1.0 / q)


@dataclass(frozen=True)
class SobolevConstant:
    N: int
    value: float


@dataclass(frozen=True)
class GNConstant:
    N: int
    q: float
    beta: float
    value: float


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Samples of a radial function together with its quadrature rule.

    ``weights`` integrate a radial density over all of R^N, i.e. they already
    contain the sphere area and the ``r^(N-1)`` factor.  ``slopes`` holds the
    radial derivative at the same nodes.
    """

    radii: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    weights: np.ndarray
    N: int

    def integrate(self, density) -> float:
        return float(np.dot(self.weights, density))

    def mass(self) -> float:
        return self.integrate(np.abs(self.values) ** 2)

    def grad(self) -> float:
        return self.integrate(np.abs(self.slopes) ** 2)

    def lp(self, p: float) -> float:
        """``||f||_p^p``."""
        return self.integrate(np.abs(self.values) ** p)

    def tail_mass(self, radius: float) -> float:
        sel = self.radii > radius
        return self.integrate(np.where(sel, np.abs(self.values) ** 2, 0.0))

    def dilate(self, s: float) -> "RadialProfile":
        """Return ``s^(N/2) f(s x)`` carried on the correspondingly scaled nodes."""
        N = self.N
        return RadialProfile(
            radii=self.radii / s,
            values=self.values * s ** (N / 2),
            slopes=self.slopes * s ** (N / 2 + 1),
            weights=self.weights * s ** (-N),
            N=N,
        )


def mapped_nodes(N: int, n: int, scale: float = 1.0):
    """Graded nodes ``r = scale * tan(phi)`` covering (0, inf).

    Midpoint rule in ``phi``; integrands that are smooth and even at both
    ends of ``[0, pi/2]`` converge spectrally.
    """
    dphi = 0.5 * math.pi / n
    phi = (np.arange(n) + 0.5) * dphi
    r = scale * np.tan(phi)
    jac = scale / np.cos(phi) ** 2
    w = sphere_area(N) * r ** (N - 1) * jac * dphi
    return r, w


def aubin_talenti_profile(N: int, n: int = 4096, scale: float = 1.0) -> RadialProfile:
    """The extremal ``(1 + |x|^2)^(-(N-2)/2)`` on a graded grid."""
    r, w = mapped_nodes(N, n, scale)
    base = 1.0 + r * r
    values = base ** (-(N - 2) / 2)
    slopes = -(N - 2) * r * base ** (-N / 2)
    return RadialProfile(r, values, slopes, w, N)


def sobolev_quotient(profile: RadialProfile) -> float:
    """``||grad f||_2^2 / ||f||_{2*}^2``; invariant under dilation and scaling."""
    ts = critical_exponent(profile.N)
    return profile.grad() / profile.lp(ts) ** (2.0 / ts)


def gn_ratio(profile: RadialProfile, q: float) -> float:
    """``||f||_q / (||grad f||_2^beta ||f||_2^(1-beta))``."""
    beta = gn_beta(profile.N, q)
    return profile.lp(q) ** (1.0 / q) / (
        profile.grad() ** (beta / 2) * profile.mass() ** ((1 - beta) / 2)
    )


def sobolev_constant(N: int, n: int = 4096) -> SobolevConstant:
    if int(N) != N or N < 3:
        raise ParameterError(f"Sobolev constant needs dimension N >= 3, got {N}")
    return SobolevConstant(int(N), sobolev_quotient(aubin_talenti_profile(int(N), n)))


def _check_gn_range(N, q):
    if int(N) != N or N < 2:
        raise ParameterError(f"dimension must be an integer >= 2, got {N}")
    upper = math.inf if N == 2 else critical_exponent(N)
    if not 2.0 < q < upper:
        raise ParameterError(f"q must lie in (2, {upper}) for N={N}, got {q}")


# ---------------------------------------------------------------------------
# shooting for the ground state of -Q'' - (N-1)Q'/r + Q = Q^(q-1)


def _decaying_mode(N, r):
    """``r^-nu K_nu(r)`` and its derivative, scaled by ``e^r`` to dodge underflow."""
    nu = (N - 2) / 2
    k0 = kve(nu, r)
    k1 = kve(nu + 1, r)
    return r ** -nu * k0, -(r ** -nu) * k1


def _rhs(N, q):
    def rhs(r, y):
        Q, P = y
        return [P, -(N - 1) / r * P + Q - abs(Q) ** (q - 2) * Q]

    return rhs


def _trajectory(N, q, a, horizon, r_start=1e-4):
    curvature = (a - a ** (q - 1)) / N
    y0 = [a + 0.5 * curvature * r_start**2, curvature * r_start]

    def crossing(r, y):
        return y[0]

    crossing.terminal = True
    crossing.direction = -1

    def turning(r, y):
        return y[1]

    turning.terminal = True
    turning.direction = 1

    sol = solve_ivp(
        _rhs(N, q), (r_start, horizon), y0, method="DOP853",
        rtol=3e-14, atol=1e-300, events=[crossing, turning], dense_output=True,
    )
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    # no event before the horizon: compare the log-derivative with the decaying mode
    Q, P = sol.y[:, -1]
    mode, dmode = _decaying_mode(N, sol.t[-1])
    mismatch = P - Q * dmode / mode
    return (1 if mismatch < 0 else -1), sol


@dataclass(frozen=True, eq=False)
class ShotGroundState:
    profile: RadialProfile
    q: float
    center: float
    bracket: tuple
    match_radius: float
    iterations: int


def shoot_ground_state(N: int, q: float, h: float = 0.01, rmax: float = 40.0,
                       max_iter: int = 200, max_doublings: int = 3) -> ShotGroundState:
    """Positive decreasing radial ground state ``Q`` by bisection on ``Q(0)``.

    An undershoot turns back up before reaching zero, an overshoot crosses
    zero.  The bisected trajectories are trusted until they separate by a
    relative ``1e-9``; beyond that the decaying solution is integrated inward
    from ``rmax`` (where the equation is linear to roundoff) and scaled to
    match.

    The outer radius is doubled (at most ``max_doublings`` times) until the
    mass beyond ``0.75 rmax`` is below ``TOL.tail_mass`` of the total.
    """
    _check_gn_range(N, q)
    for _ in range(max_doublings):
        try:
            return _shoot(N, q, h, rmax, max_iter)
        except ResolutionError:
            rmax *= 2.0
    return _shoot(N, q, h, rmax, max_iter)


def _shoot(N, q, h, rmax, max_iter) -> ShotGroundState:
    # the central value satisfies Q(0)^(q-2) > q/2; start halfway to that bound
    lo = (1.0 + 0.25 * (q - 2.0)) ** (1.0 / (q - 2.0))
    hi = 2.0 * lo
    kind, sol_lo = _trajectory(N, q, lo, rmax)
    if kind != -1:
        raise ShootingError("lower bracket does not undershoot", lo, hi, 0)
    for _ in range(64):
        kind, sol_hi = _trajectory(N, q, hi, rmax)
        if kind == 1:
            break
        lo, sol_lo = hi, sol_hi
        hi *= 2.0
    else:
        raise ShootingError("could not find an overshooting central value", lo, hi, 0)

    it = 0
    while hi - lo > 4 * np.spacing(hi):
        if it >= max_iter:
            raise ShootingError(
                f"bisection did not converge after {max_iter} iterations "
                f"(bracket [{lo!r}, {hi!r}])", lo, hi, it)
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        kind, sol = _trajectory(N, q, mid, rmax)
        if kind == 1:
            hi, sol_hi = mid, sol
        else:
            lo, sol_lo = mid, sol
        it += 1

    radii = np.arange(0.0, rmax + 0.5 * h, h)
    r_common = min(sol_lo.t[-1], sol_hi.t[-1])
    inner = radii[(radii > 0) & (radii <= r_common)]
    ylo = sol_lo.sol(inner)
    yhi = sol_hi.sol(inner)
    ymid = 0.5 * (ylo + yhi)
    spread = np.abs(ylo[0] - yhi[0])
    trusted = (spread <= 1e-9 * np.abs(ymid[0])) & (ymid[0] > 0) & (ymid[1] < 0)
    bad = np.flatnonzero(~trusted)
    # skip the first few nodes where Q' ~ 0 makes the sign test meaningless
    bad = bad[inner[bad] > 0.5]
    stop = bad[0] if bad.size else inner.size
    if stop < 2:
        raise ShootingError("bisected trajectories disagree immediately", lo, hi, it)
    r_match = inner[stop - 1]
    Q_match = ymid[0, stop - 1]

    values = np.empty_like(radii)
    slopes = np.empty_like(radii)
    values[0] = 0.5 * (lo + hi)
    slopes[0] = 0.0
    values[1:stop + 1] = ymid[0, :stop]
    slopes[1:stop + 1] = ymid[1, :stop]

    if r_match < radii[-1]:
        tail_r = radii[stop + 1:]
        rhs = _rhs(N, q)
        mode_far, dmode_far = _decaying_mode(N, rmax)

        def inward(log_amp):
            amp = math.exp(log_amp - rmax)
            back = solve_ivp(rhs, (rmax, r_match), [amp * mode_far, amp * dmode_far],
                             method="DOP853", rtol=3e-14, atol=1e-300, dense_output=True)
            return math.log(back.sol(r_match)[0] / Q_match), back

        # the inward map is close to linear in log-amplitude; secant iteration
        x0 = math.log(Q_match * math.exp(r_match) / _decaying_mode(N, r_match)[0])
        f0, back = inward(x0)
        x1 = x0 - f0
        for _ in range(40):
            f1, back = inward(x1)
            if abs(f1) < 1e-14 or f1 == f0:
                break
            x0, x1, f0 = x1, x1 - f1 * (x1 - x0) / (f1 - f0), f1
        else:
            raise ShootingError("tail amplitude match did not converge", lo, hi, it)
        yt = back.sol(tail_r)
        values[stop + 1:] = yt[0]
        slopes[stop + 1:] = yt[1]

    w = sphere_area(N) * radii ** (N - 1) * h
    w[-1] *= 0.5
    profile = RadialProfile(radii, values, slopes, w, N)
    if profile.tail_mass(0.75 * rmax) > TOL.tail_mass * profile.mass():
        raise ResolutionError(f"outer radius {rmax} too small: tail mass not negligible")
    return ShotGroundState(profile, q, values[0], (lo, hi), r_match, it)


def ode_residual(shot: ShotGroundState) -> np.ndarray:
    """Fourth-order finite-difference residual of the ground-state ODE.

    Evaluated on interior nodes ``2 .. M-3`` from the sampled values only.
    """
    prof = shot.profile
    Q = prof.values
    r = prof.radii
    h = r[1] - r[0]
    N, q = prof.N, shot.q
    d2 = (-Q[4:] + 16 * Q[3:-1] - 30 * Q[2:-2] + 16 * Q[1:-3] - Q[:-4]) / (12 * h * h)
    d1 = (-Q[4:] + 8 * Q[3:-1] - 8 * Q[1:-3] + Q[:-4]) / (12 * h)
    rc = r[2:-2]
    Qc = Q[2:-2]
    return -d2 - (N - 1) * d1 / rc + Qc - np.abs(Qc) ** (q - 2) * Qc


# ---------------------------------------------------------------------------
# constants and their cache


class ConstantsCache:
    """Plain-text cache, one ``N q S C beta`` record per line.

    Writers replace the whole file atomically; concurrent writers race with
    last-writer-wins semantics.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    @staticmethod
    def _key(N, q):
        return (int(N), f"{float(q):.17g}")

    def read(self) -> dict:
        records = {}
        if not self.path.exists():
            return records
        for line in self.path.read_text().splitlines():
            parts = line.split()
            if len(parts) != 5:
                continue
            N, q, S, C, beta = parts
            records[self._key(int(N), float(q))] = (float(S), float(C), float(beta))
        return records

    def get(self, N, q):
        return self.read().get(self._key(N, q))

    def put(self, N, q, S, C, beta):
        with self._lock:
            records = self.read()
            records[self._key(N, q)] = (S, C, beta)
            lines = [
                f"{k[0]} {k[1]} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}"
                for k, v in sorted(records.items(), key=lambda kv: (kv[0][0], float(kv[0][1])))
            ]
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".constants-")
            with os.fdopen(fd, "w") as fh:
                fh.write("\n".join(lines) + "\n")
            os.replace(tmp, self.path)


@lru_cache(maxsize=None)
def _gn_cached(N, q):
    shot = shoot_ground_state(N, q)
    return GNConstant(N, q, gn_beta(N, q), gn_ratio(shot.profile, q))


def gn_constant(N: int, q: float) -> GNConstant:
    """Sharp constant, realised on the shot ground state (Weinstein)."""
    _check_gn_range(N, q)
    return _gn_cached(int(N), float(q))


def sharp_constants(N: int, q: float, cache: ConstantsCache | None = None):
    """``(SobolevConstant, GNConstant)``, consulting ``cache`` when given."""
    if cache is not None:
        hit = cache.get(N, q)
        if hit is not None:
            S, C, beta = hit
            return SobolevConstant(int(N), S), GNConstant(int(N), float(q), beta, C)
    sob = sobolev_constant(N)
    gn = gn_constant(N, q)
    if cache is not None:
        cache.put(N, q, sob.value, gn.value, gn.beta)
    return sob, gn


# ---------------------------------------------------------------------------
# random trial fields


def random_radial_trial(rng: np.random.Generator, N: int, n: int = 2048) -> RadialProfile:
    """A random smooth radial field: a sum of 1-3 Gaussian, shell and algebraic bumps."""
    r, w = mapped_nodes(N, n)
    values = np.zeros_like(r)
    slopes = np.zeros_like(r)
    for _ in range(rng.integers(1, 4)):
        amp = rng.uniform(0.2, 2.0) * rng.choice([-1.0, 1.0])
        kind = rng.integers(3)
        if kind == 0:
            b = 10 ** rng.uniform(-1, 1)
            e = np.exp(-b * r * r)
            values += amp * e
            slopes += amp * (-2 * b * r) * e
        elif kind == 1:
            b = 10 ** rng.uniform(-0.5, 1)
            r0 = rng.uniform(0.5, 3.0)
            e = np.exp(-b * (r * r - r0 * r0) ** 2 / (1 + r0 * r0))
            values += amp * e
            slopes += amp * e * (-4 * b * r * (r * r - r0 * r0) / (1 + r0 * r0))
        else:
            b = 10 ** rng.uniform(-0.5, 0.5)
            gam = N / 4 + rng.uniform(0.3, 2.0)
            base = 1 + b * r * r
            values += amp * base ** -gam
            slopes += amp * (-gam) * 2 * b * r * base ** (-gam - 1)
    return RadialProfile(r, values, slopes, w, N)
