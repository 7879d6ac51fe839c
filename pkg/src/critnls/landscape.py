"""Scalar landscape algebra.

For a mass ``c`` and a gradient level ``rho = ||grad u||_2^2`` the energy on the
mass sphere is bounded below by ``rho * f(c, rho)`` with

    f(c, rho) = 1/2 - (mu/q) C^q rho^(a0/2) c^(a1/2) - (1/2*) S^(-2*/2) rho^(a2/2).

Everything here is closed-form scalar arithmetic; the brute-force scans at
the bottom exist as independent oracles for the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, ParameterError
from .sharp_constants import (
    ConstantsCache,
    GNConstant,
    SobolevConstant,
    critical_exponent,
    sharp_constants,
)
from .tolerances import TOL


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``N >= 3``, subcritical power ``2 < q < 2 + 4/N`` and coupling ``mu > 0``."""

    N: int
    q: float
    mu: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ParameterError(f"dimension must be an integer >= 3, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not math.isfinite(self.q) or self.q <= 2.0:
            raise ParameterError(f"q must exceed 2, got {self.q}")
        if self.q >= self.mass_critical:
            raise ParameterError(
                f"q must be strictly below the mass-critical exponent "
                f"2 + 4/N = {self.mass_critical}, got {self.q}")
        if not math.isfinite(self.mu) or self.mu <= 0.0:
            raise ParameterError(f"mu must be positive, got {self.mu}")

    @property
    def crit(self) -> float:
        """The energy-critical exponent ``2* = 2N/(N-2)``."""
        return critical_exponent(self.N)

    @property
    def mass_critical(self) -> float:
        return 2.0 + 4.0 / self.N


@dataclass(frozen=True)
class Exponents:
    alpha0: float
    alpha1: float
    alpha2: float


def exponents(params: ModelParams) -> Exponents:
    N, q = params.N, params.q
    return Exponents(
        alpha0=N * (q - 2) / 2 - 2,
        alpha1=(2 * N - q * (N - 2)) / 2,
        alpha2=4.0 / (N - 2),
    )


@dataclass(frozen=True)
class LandscapeConstants:
    gn: GNConstant
    sobolev: SobolevConstant
    K: float
    c0: float
    rho0: float
    beta0: float


# ---------------------------------------------------------------------------
# coefficients shared by the closed forms


def _coefficients(params: ModelParams, gn: GNConstant, sob: SobolevConstant):
    """``(a, b)`` with ``f = 1/2 - a rho^(a0/2) c^(a1/2) - b rho^(a2/2)``."""
    ts = params.crit
    a = params.mu / params.q * gn.value ** params.q
    b = 1.0 / ts * sob.value ** (-ts / 2)
    return a, b


def _A(params, gn, sob) -> float:
    """The bracket ``-(a0/a2) mu C^q 2* S^(2*/2) / q`` common to rho_c and K."""
    e = exponents(params)
    ts = params.crit
    return -(e.alpha0 / e.alpha2) * params.mu * gn.value ** params.q * ts * sob.value ** (ts / 2) / params.q


def _K(params, gn, sob) -> float:
    e = exponents(params)
    a, b = _coefficients(params, gn, sob)
    A = _A(params, gn, sob)
    d = e.alpha2 - e.alpha0
    return a * A ** (e.alpha0 / d) + b * A ** (e.alpha2 / d)


def _rho_c(params, gn, sob, c):
    e = exponents(params)
    d = e.alpha2 - e.alpha0
    return _A(params, gn, sob) ** (2.0 / d) * np.asarray(c, dtype=float) ** (e.alpha1 / d)


def build_constants(params: ModelParams, cache: ConstantsCache | None = None,
                    sobolev: SobolevConstant | None = None,
                    gn: GNConstant | None = None) -> LandscapeConstants:
    """Assemble ``K, c0, rho0, beta0`` from the sharp constants.

    ``sobolev``/``gn`` may be supplied directly (tests use this to explore
    perturbed constants); otherwise they are computed or read from ``cache``.
    """
    if sobolev is None or gn is None:
        s, g = sharp_constants(params.N, params.q, cache=cache)
        sobolev = sobolev or s
        gn = gn or g
    K = _K(params, gn, sobolev)
    c0 = (1.0 / (2.0 * K)) ** (params.N / 2)
    rho0 = float(_rho_c(params, gn, sobolev, c0))
    _, b = _coefficients(params, gn, sobolev)
    e = exponents(params)
    beta = 0.5 - b * rho0 ** (e.alpha2 / 2)
    return LandscapeConstants(gn=gn, sobolev=sobolev, K=K, c0=c0, rho0=rho0, beta0=beta)


# ---------------------------------------------------------------------------
# the landscape function and its closed-form features


def _positive(name, x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def f(params: ModelParams, constants: LandscapeConstants, c, rho):
    """``f(c, rho)``; broadcasts over array arguments."""
    c = _positive("c", c)
    rho = _positive("rho", rho)
    e = exponents(params)
    a, b = _coefficients(params, constants.gn, constants.sobolev)
    out = 0.5 - a * rho ** (e.alpha0 / 2) * c ** (e.alpha1 / 2) - b * rho ** (e.alpha2 / 2)
    return _scalar_or_array(out)


def g_prime(params: ModelParams, constants: LandscapeConstants, c, rho):
    """``d/drho f(c, rho)``."""
    c = _positive("c", c)
    rho = _positive("rho", rho)
    e = exponents(params)
    a, b = _coefficients(params, constants.gn, constants.sobolev)
    out = (-e.alpha0 / 2 * a * rho ** (e.alpha0 / 2 - 1) * c ** (e.alpha1 / 2)
           - e.alpha2 / 2 * b * rho ** (e.alpha2 / 2 - 1))
    return _scalar_or_array(out)


def rho_max(params: ModelParams, constants: LandscapeConstants, c):
    """Closed-form unique maximiser ``rho_c`` of ``rho -> f(c, rho)``."""
    c = _positive("c", c)
    return _scalar_or_array(_rho_c(params, constants.gn, constants.sobolev, c))


def threshold_mass(params: ModelParams, constants: LandscapeConstants):
    """``(K, c0)`` with ``c0 = (1/(2K))^(N/2)``."""
    K = _K(params, constants.gn, constants.sobolev)
    return K, (1.0 / (2.0 * K)) ** (params.N / 2)


def max_g(params: ModelParams, constants: LandscapeConstants, c):
    """Closed-form ``max_rho f(c, rho) = 1/2 - K c^(2/N)``."""
    c = _positive("c", c)
    return _scalar_or_array(0.5 - constants.K * c ** (2.0 / params.N))


def monotone_extension(params: ModelParams, constants: LandscapeConstants,
                       c1: float, rho1: float, c2: float):
    """Interval ``[(c2/c1) rho1, rho1]`` on which ``f(c2, .) >= 0``.

    Requires ``f(c1, rho1) >= 0`` and ``0 < c2 <= c1``.
    """
    if not (c1 > 0 and rho1 > 0 and c2 > 0):
        raise DomainError("c1, rho1, c2 must be positive")
    if c2 > c1:
        raise DomainError(f"need c2 <= c1, got c2={c2} > c1={c1}")
    val = f(params, constants, c1, rho1)
    if val < 0:
        raise DomainError(f"need f(c1, rho1) >= 0, got {val}")
    return (c2 / c1) * rho1, rho1


def beta0(params: ModelParams, constants: LandscapeConstants) -> float:
    """``1/2 - (1/2*) S^(-2*/2) rho0^(a2/2)``."""
    _, b = _coefficients(params, constants.gn, constants.sobolev)
    return 0.5 - b * constants.rho0 ** (exponents(params).alpha2 / 2)


def beta0_from_subcritical(params: ModelParams, constants: LandscapeConstants) -> float:
    """The same number written as ``(mu/q) C^q rho0^(a0/2) c0^(a1/2)``."""
    a, _ = _coefficients(params, constants.gn, constants.sobolev)
    e = exponents(params)
    return a * constants.rho0 ** (e.alpha0 / 2) * constants.c0 ** (e.alpha1 / 2)


# ---------------------------------------------------------------------------
# brute-force oracles


@dataclass(frozen=True)
class ScanResult:
    rho: float
    value: float
    grid_rho: float
    grid_value: float


def log_grid(lo: float = 1e-8, hi: float = 1e8, n: int = 200001) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def scan_max_g(params: ModelParams, constants: LandscapeConstants, c: float,
               grid: np.ndarray | None = None) -> ScanResult:
    """Maximum of ``f(c, .)`` over a log-spaced grid.

    The grid maximum is refined by the vertex of the parabola through the
    best node and its two neighbours (in ``log rho``).
    """
    rho = log_grid() if grid is None else np.asarray(grid, dtype=float)
    vals = f(params, constants, c, rho)
    i = int(np.argmax(vals))
    if i == 0 or i == rho.size - 1:
        raise DomainError("maximum sits on the edge of the scan grid; widen it")
    x = np.log(rho[i - 1:i + 2])
    y = vals[i - 1:i + 2]
    # vertex of the interpolating parabola (nodes need not be equispaced)
    d01 = (y[1] - y[0]) / (x[1] - x[0])
    d12 = (y[2] - y[1]) / (x[2] - x[1])
    curv = (d12 - d01) / (x[2] - x[0])
    xv = 0.5 * (x[0] + x[1]) - d01 / (2 * curv)
    yv = _parabola(x, y, xv)
    return ScanResult(rho=float(np.exp(xv)), value=float(yv),
                      grid_rho=float(rho[i]), grid_value=float(vals[i]))


def _parabola(x, y, t):
    """Lagrange interpolant through three points evaluated at ``t``."""
    l0 = (t - x[1]) * (t - x[2]) / ((x[0] - x[1]) * (x[0] - x[2]))
    l1 = (t - x[0]) * (t - x[2]) / ((x[1] - x[0]) * (x[1] - x[2]))
    l2 = (t - x[0]) * (t - x[1]) / ((x[2] - x[0]) * (x[2] - x[1]))
    return l0 * y[0] + l1 * y[1] + l2 * y[2]


def _increment(params, constants, c, rho_ref):
    """``t -> f(c, rho_ref e^t) - f(c, rho_ref)`` without cancellation."""
    e = exponents(params)
    a, b = _coefficients(params, constants.gn, constants.sobolev)
    t0 = a * rho_ref ** (e.alpha0 / 2) * c ** (e.alpha1 / 2)
    t2 = b * rho_ref ** (e.alpha2 / 2)

    def inc(t):
        return -t0 * math.expm1(e.alpha0 / 2 * t) - t2 * math.expm1(e.alpha2 / 2 * t)

    return inc


def golden_argmax(params: ModelParams, constants: LandscapeConstants, c: float,
                  grid: np.ndarray | None = None):
    """``(rho*, max)`` by golden-section search.

    A coarse log-grid scan brackets the maximum; golden section then runs on
    the increment relative to the best grid node, which keeps the objective
    free of the cancellation that otherwise limits the argmax to ~sqrt(eps).
    """
    rho = log_grid(n=4001) if grid is None else np.asarray(grid, dtype=float)
    vals = f(params, constants, c, rho)
    i = int(np.argmax(vals))
    if i == 0 or i == rho.size - 1:
        raise DomainError("maximum sits on the edge of the scan grid; widen it")
    rho_ref = float(rho[i])
    inc = _increment(params, constants, c, rho_ref)
    left = math.log(rho[i - 1] / rho_ref)
    right = math.log(rho[i + 1] / rho_ref)
    res = minimize_scalar(lambda t: -inc(t), bracket=(left, 0.0, right), method="golden",
                          options={"xtol": 1e-15, "maxiter": 500})
    t = float(res.x)
    return rho_ref * math.exp(t), float(vals[i]) + inc(t)


def c0_by_bisection(params: ModelParams, constants: LandscapeConstants) -> float:
    """Root of ``c -> max_rho f(c, rho)`` with the maximum found numerically."""

    def h(logc):
        return golden_argmax(params, constants, math.exp(logc))[1]

    lo, hi = -5.0, 5.0
    while h(lo) <= 0:
        lo -= 5.0
    while h(hi) >= 0:
        hi += 5.0
    return math.exp(brentq(h, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def sign_changes(values: np.ndarray) -> int:
    s = np.sign(values)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def landscape_table(params: ModelParams, constants: LandscapeConstants, cs):
    """Rows ``(c, rho_c, max_g, f(c, rho0))`` for the CLI."""
    rows = []
    for c in cs:
        rows.append((float(c), rho_max(params, constants, c), max_g(params, constants, c),
                     f(params, constants, c, constants.rho0)))
    return rows
