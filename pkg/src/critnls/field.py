"""Sampled H^1 fields and the functionals evaluated on them.

Two backends share one interface:

``RadialGrid``
    cell-centred nodes ``r_i = (i + 1/2) h`` on ``(0, rmax)`` for radial
    functions.  Quadrature is the midpoint rule with weight ``|S^(N-1)| r^(N-1)``;
    radial derivatives live on the cell faces and use a fourth-order stencil
    with an even reflection at the origin.
``BoxGrid``
    the periodic box ``[-L/2, L/2)^N`` with ``n`` nodes per axis (a power of
    two); derivatives are spectral.

The variational gradient on each backend is the exact adjoint of its
gradient quadrature, so directional derivatives of the discrete energy are
reproduced to roundoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import GridMismatchError, ParameterError, ResolutionError
from .landscape import ModelParams, exponents
from .sharp_constants import sphere_area
from .tolerances import TOL


# ---------------------------------------------------------------------------
# grids


class RadialGrid:
    kind = "radial"

    def __init__(self, N: int, n: int, rmax: float):
        if int(N) != N or N < 1:
            raise ParameterError(f"bad dimension {N}")
        if n < 8:
            raise ParameterError("radial grid needs at least 8 nodes")
        if not rmax > 0:
            raise ParameterError("rmax must be positive")
        self.N = int(N)
        self.n = int(n)
        self.rmax = float(rmax)
        self.h = self.rmax / self.n
        self.r = (np.arange(self.n) + 0.5) * self.h
        self.weights = sphere_area(self.N) * self.r ** (self.N - 1) * self.h
        self.faces = (np.arange(self.n) + 1.0) * self.h
        self.face_weights = sphere_area(self.N) * self.faces ** (self.N - 1) * self.h

    @property
    def shape(self):
        return (self.n,)

    def descriptor(self) -> dict:
        return {"kind": "radial", "N": self.N, "n": self.n, "rmax": self.rmax}

    def __eq__(self, other):
        return isinstance(other, RadialGrid) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(tuple(self.descriptor().items()))

    def __repr__(self):
        return f"RadialGrid(N={self.N}, n={self.n}, rmax={self.rmax})"

    def radius(self) -> np.ndarray:
        return self.r

    @cached_property
    def D(self) -> sp.csr_matrix:
        """Node-to-face derivative, ``(u[j-1] - 27u[j] + 27u[j+1] - u[j+2]) / 24h``.

        Ghosts: ``u[-1] = u[0]`` (even reflection), zero beyond ``rmax``.
        """
        n, h = self.n, self.h
        rows, cols, vals = [], [], []
        for j in range(n):
            for off, c in ((-1, 1.0), (0, -27.0), (1, 27.0), (2, -1.0)):
                k = j + off
                if k == -1:
                    k = 0
                if k >= n:
                    continue
                rows.append(j)
                cols.append(k)
                vals.append(c / (24.0 * h))
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """``D^T diag(face_weights) D`` — the quadratic form of ``||grad u||^2``."""
        return (self.D.T @ sp.diags(self.face_weights) @ self.D).tocsr()

    def integrate(self, density) -> float:
        return float(np.dot(self.weights, np.real(density)))

    def inner(self, u, v) -> complex:
        """``int u conj(v)``."""
        return complex(np.dot(self.weights, u * np.conj(v)))

    def grad_inner(self, u, v) -> complex:
        return complex(np.dot(self.face_weights, (self.D @ u) * np.conj(self.D @ v)))

    def grad_norm2(self, u) -> float:
        du = self.D @ u
        return float(np.dot(self.face_weights, np.abs(du) ** 2))

    def neg_laplacian(self, u) -> np.ndarray:
        return (self.stiffness @ u) / self.weights

    def resolvent(self, kappa: float = 1.0) -> Callable:
        """``g -> (kappa - Delta)^(-1) g`` in the grid's own inner product."""
        key = round(float(kappa), 12)
        cache = self.__dict__.setdefault("_resolvents", {})
        if key not in cache:
            if len(cache) > 8:
                cache.clear()
            A = (sp.diags(kappa * self.weights) + self.stiffness).tocsc()
            cache[key] = splu(A)
        lu = cache[key]

        def solve(g):
            g = np.asarray(g)
            w = self.weights
            if np.iscomplexobj(g):
                return lu.solve(w * g.real) + 1j * lu.solve(w * g.imag)
            return lu.solve(w * g)

        return solve

    def tail_mass(self, u, radius: float) -> float:
        return self.integrate(np.where(self.r > radius, np.abs(u) ** 2, 0.0))


class BoxGrid:
    kind = "box"

    def __init__(self, N: int, n: int, L: float):
        if int(N) != N or N < 1:
            raise ParameterError(f"bad dimension {N}")
        if n < 4 or (n & (n - 1)) != 0:
            raise ParameterError(f"box nodes per dimension must be a power of two, got {n}")
        if not L > 0:
            raise ParameterError("box side must be positive")
        self.N = int(N)
        self.n = int(n)
        self.L = float(L)
        self.dx = self.L / self.n
        self.x = (np.arange(self.n) - self.n // 2) * self.dx
        self.k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        self.cell = self.dx ** self.N

    @property
    def shape(self):
        return (self.n,) * self.N

    def descriptor(self) -> dict:
        return {"kind": "box", "N": self.N, "n": self.n, "L": self.L}

    def __eq__(self, other):
        return isinstance(other, BoxGrid) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(tuple(self.descriptor().items()))

    def __repr__(self):
        return f"BoxGrid(N={self.N}, n={self.n}, L={self.L})"

    def mesh(self):
        return np.meshgrid(*([self.x] * self.N), indexing="ij", sparse=True)

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.mesh()))

    @cached_property
    def k2(self) -> np.ndarray:
        ks = np.meshgrid(*([self.k] * self.N), indexing="ij", sparse=True)
        return sum(c * c for c in ks)

    def fft(self, u):
        return sfft.fftn(u, workers=1)

    def ifft(self, uh):
        return sfft.ifftn(uh, workers=1)

    def integrate(self, density) -> float:
        return float(np.real(np.sum(density)) * self.cell)

    def inner(self, u, v) -> complex:
        return complex(np.vdot(v, u) * self.cell)

    def grad_inner(self, u, v) -> complex:
        uh, vh = self.fft(u), self.fft(v)
        return complex(np.vdot(vh, self.k2 * uh) * self.cell / u.size)

    def grad_norm2(self, u) -> float:
        uh = self.fft(u)
        return float(np.sum(self.k2 * np.abs(uh) ** 2) * self.cell / u.size)

    def neg_laplacian(self, u) -> np.ndarray:
        return self.ifft(self.k2 * self.fft(u))

    def resolvent(self, kappa: float = 1.0) -> Callable:
        k2 = self.k2

        def solve(g):
            return self.ifft(self.fft(g) / (kappa + k2))

        return solve

    def tail_mass(self, u, radius: float) -> float:
        return self.integrate(np.where(self.radius() > radius, np.abs(u) ** 2, 0.0))


Grid = Union[RadialGrid, BoxGrid]

# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class FieldState:
    """Immutable complex samples of ``u`` on ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise GridMismatchError(f"values of shape {vals.shape} do not fit {self.grid!r}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "FieldState":
        """Sample a radial profile ``fn(r)``."""
        return cls(grid, fn(grid.radius()))

    def with_values(self, values) -> "FieldState":
        return FieldState(self.grid, values)

    def __add__(self, other):
        _same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def mass(self) -> float:
        return self.grid.integrate(np.abs(self.values) ** 2)

    def grad(self) -> float:
        return self.grid.grad_norm2(self.values)

    def h1_norm(self) -> float:
        return math.sqrt(max(self.mass() + self.grad(), 0.0))

    def tail_fraction(self) -> float:
        """Mass outside half the grid extent (``|x| > L/4`` or ``r > rmax/2``) over the total."""
        total = self.mass()
        if total == 0:
            return 0.0
        edge = self.grid.L / 4 if self.grid.kind == "box" else self.grid.rmax / 2
        return self.grid.tail_mass(self.values, edge) / total


def _same_grid(a: FieldState, b: FieldState):
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid!r} vs {b.grid!r}")


def _check_dims(u: FieldState, params: ModelParams):
    if u.grid.N != params.N:
        raise GridMismatchError(f"grid dimension {u.grid.N} differs from model dimension {params.N}")


def h1_inner(u: FieldState, v: FieldState) -> complex:
    _same_grid(u, v)
    return u.grid.inner(u.values, v.values) + u.grid.grad_inner(u.values, v.values)


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    grad: float
    lq: float
    lcrit: float
    energy: float
    pohozaev: float
    multiplier: float


def report_from_norms(params: ModelParams, mass, grad, lq, lcrit) -> FunctionalReport:
    q, mu, N, ts = params.q, params.mu, params.N, params.crit
    energy = 0.5 * grad - mu / q * lq - lcrit / ts
    pohozaev = grad - mu * N * (q - 2) / (2 * q) * lq - lcrit
    lam = (grad - mu * lq - lcrit) / mass if mass > 0 else 0.0
    return FunctionalReport(float(mass), float(grad), float(lq), float(lcrit),
                            float(energy), float(pohozaev), float(lam))


def functionals(u: FieldState, params: ModelParams) -> FunctionalReport:
    """Norms, energy, Pohozaev functional and multiplier of ``u``."""
    _check_dims(u, params)
    a = np.abs(u.values)
    g = u.grid
    return report_from_norms(params, g.integrate(a * a), u.grad(),
                             g.integrate(a ** params.q), g.integrate(a ** params.crit))


def energy(u: FieldState, params: ModelParams) -> float:
    return functionals(u, params).energy


def variational_gradient(u: FieldState, params: ModelParams) -> FieldState:
    """``-Delta u - mu |u|^(q-2) u - |u|^(2*-2) u`` (the multiplier-free Euler-Lagrange operator)."""
    _check_dims(u, params)
    v = u.values
    a = np.abs(v)
    nonlin = params.mu * a ** (params.q - 2) * v + a ** (params.crit - 2) * v
    out = u.grid.neg_laplacian(v) - nonlin
    if u.grid.kind == "radial" and not np.any(v.imag):
        out = out.real
    return u.with_values(out)


def euler_lagrange_residual(u: FieldState, params: ModelParams) -> FieldState:
    """``-Delta u - lambda u - g(u)`` with the multiplier taken from ``u`` itself."""
    lam = functionals(u, params).multiplier
    return u.with_values(variational_gradient(u, params).values - lam * u.values)


# ---------------------------------------------------------------------------
# dilations and fibre maps


def _radial_interpolant(grid: RadialGrid, values):
    """Even cubic spline through the nodes, zero beyond ``rmax``."""
    r = np.concatenate([-grid.r[::-1], grid.r, [grid.rmax + 0.5 * grid.h]])
    re = np.concatenate([values.real[::-1], values.real, [0.0]])
    im = np.concatenate([values.imag[::-1], values.imag, [0.0]])
    sr, si = CubicSpline(r, re), CubicSpline(r, im)

    def ev(x):
        x = np.abs(x)
        out = sr(x) + 1j * si(x)
        return np.where(x <= grid.rmax, out, 0.0)

    return ev


def _trig_interp_matrix(grid: BoxGrid, points) -> np.ndarray:
    """Matrix evaluating the periodic trigonometric interpolant at ``points``.

    The Nyquist mode is taken as a cosine so real data stay real.
    """
    n = grid.n
    k = grid.k.copy()
    phase = np.outer(points - grid.x[0], k)
    E = np.exp(1j * phase)
    E[:, n // 2] = np.cos(phase[:, n // 2])
    F = np.fft.fft(np.eye(n), axis=0) / n
    M = E @ F
    # outside the fundamental cell the interpolant would repeat periodic images
    M[np.abs(points) > grid.L / 2] = 0.0
    return M


def dilate(u: FieldState, s: float) -> FieldState:
    """``u_s(x) = s^(N/2) u(s x)``; preserves mass and scales the gradient by ``s^2``."""
    if not s > 0:
        raise ParameterError("dilation factor must be positive")
    g = u.grid
    N = g.N
    total = u.mass()
    if s == 1.0:
        return u
    if total > 0 and s < 1:
        # the dilated field spreads by 1/s; what sits beyond s * extent is lost
        edge = s * (g.L / 2 if g.kind == "box" else g.rmax)
        if g.kind == "box":
            outside = g.integrate(np.where(np.max(np.abs(np.stack(np.broadcast_arrays(*g.mesh()))), axis=0) > edge,
                                           np.abs(u.values) ** 2, 0.0))
        else:
            outside = g.tail_mass(u.values, edge)
        if outside > TOL.tail_mass * total:
            raise ResolutionError(f"dilation by {s} pushes mass {outside / total:.3e} off the grid")
    if g.kind == "radial":
        vals = s ** (N / 2) * _radial_interpolant(g, u.values)(s * g.r)
    else:
        M = _trig_interp_matrix(g, s * g.x)
        vals = u.values
        for axis in range(N):
            vals = np.moveaxis(np.tensordot(M, vals, axes=([1], [axis])), 0, axis)
        vals = s ** (N / 2) * vals
    out = u.with_values(vals)
    if total > 0 and abs(out.mass() - total) > TOL.dilation_mass_rel * total:
        raise ResolutionError(
            f"dilation by {s} changed the mass by {abs(out.mass() - total) / total:.3e} (relative); "
            "refine the grid")
    return out


def _as_report(u, params) -> FunctionalReport:
    return u if isinstance(u, FunctionalReport) else functionals(u, params)


def fiber_map(u, params: ModelParams, s: float) -> float:
    """``psi_u(s) = F(u_s)`` in closed form from the norms of ``u``."""
    r = _as_report(u, params)
    q, mu, ts = params.q, params.mu, params.crit
    gam = params.N * (q - 2) / 2
    return 0.5 * s * s * r.grad - mu / q * s ** gam * r.lq - s ** ts / ts * r.lcrit


def fiber_derivative(u, params: ModelParams, s: float) -> float:
    """``psi_u'(s) = P(u_s) / s``."""
    return pohozaev_dilated(u, params, s) / s


def pohozaev_dilated(u, params: ModelParams, s: float) -> float:
    """``P(u_s)`` from the norms of ``u``."""
    r = _as_report(u, params)
    q, mu, N, ts = params.q, params.mu, params.N, params.crit
    gam = N * (q - 2) / 2
    return s * s * r.grad - mu * N * (q - 2) / (2 * q) * s ** gam * r.lq - s ** ts * r.lcrit


def theta(u, params: ModelParams, s, include_critical: bool = True):
    """``theta(s) = grad - (mu N (q-2)/(2q)) s^a0 lq - s^a2 lcrit``; ``psi'(s) = s theta(s)``."""
    r = _as_report(u, params)
    e = exponents(params)
    a = params.mu * params.N * (params.q - 2) / (2 * params.q)
    lcrit = r.lcrit if include_critical else 0.0
    s = np.asarray(s, dtype=float)
    out = r.grad - a * s ** e.alpha0 * r.lq - s ** e.alpha2 * lcrit
    return float(out) if out.ndim == 0 else out


def theta_zeros(u, params: ModelParams, include_critical: bool = True) -> list:
    """All zeros of ``theta`` (at most two), bracketed around its unique critical point.

    With ``include_critical=False`` the critical term is dropped and the single
    zero of the pure power balance is returned.
    """
    r = _as_report(u, params)
    e = exponents(params)
    a = params.mu * params.N * (params.q - 2) / (2 * params.q)
    lcrit = r.lcrit if include_critical else 0.0
    grad, lq = r.grad, r.lq
    if grad == 0 and lq == 0 and lcrit == 0:
        return []

    def th(s):
        return grad - a * s ** e.alpha0 * lq - s ** e.alpha2 * lcrit

    def root(lo, hi):
        return brentq(th, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    if lq == 0:
        return [(grad / lcrit) ** (1 / e.alpha2)] if lcrit > 0 and grad > 0 else []
    if lcrit == 0:
        # theta increases from -inf to grad: one zero when grad > 0
        return [(grad / (a * lq)) ** (1 / e.alpha0)] if grad > 0 else []
    # unique critical point, where theta attains its maximum
    s_star = (-e.alpha0 * a * lq / (e.alpha2 * lcrit)) ** (1 / (e.alpha2 - e.alpha0))
    peak = th(s_star)
    if peak < 0:
        return []
    if peak == 0:
        return [s_star]
    lo = s_star
    while th(lo) > 0:
        lo *= 0.5
    hi = s_star
    while th(hi) > 0:
        hi *= 2.0
    return [root(lo, s_star), root(s_star, hi)]


# ---------------------------------------------------------------------------
# orbit distance


@dataclass(frozen=True)
class OrbitAlignment:
    distance: float
    shift: tuple
    phase: float
    approximation: str = "distance to the orbit of a single computed minimiser"


def _refine_shift(g: BoxGrid, A, y0, max_iter: int = 30):
    """Maximise ``|C(y)|``, ``C(y) = sum_k A_k exp(i k.y)``, by safeguarded Newton steps from ``y0``."""
    ks = [kk.reshape([-1 if a == axis else 1 for a in range(g.N)])
          for axis, kk in enumerate([g.k] * g.N)]
    y = np.array(y0, dtype=float)

    def terms(y):
        E = 1.0
        for kk, yy in zip(ks, y):
            E = E * np.exp(1j * kk * yy)
        AE = A * E
        C = AE.sum()
        G = np.array([(kk * AE).sum() * 1j for kk in ks])
        H = np.empty((g.N, g.N), dtype=complex)
        for i in range(g.N):
            for j in range(i, g.N):
                H[i, j] = H[j, i] = -(ks[i] * ks[j] * AE).sum()
        return C, G, H

    C, G, H = terms(y)
    for _ in range(max_iter):
        f = abs(C) ** 2
        grad = 2 * np.real(np.conj(C) * G)
        hess = 2 * np.real(np.outer(np.conj(G), G) + np.conj(C) * H)
        try:
            if np.all(np.linalg.eigvalsh(hess) < 0):
                step = -np.linalg.solve(hess, grad)
            else:
                step = grad / (np.linalg.norm(grad) + 1e-300) * 0.25 * g.dx
        except np.linalg.LinAlgError:
            break
        norm = np.linalg.norm(step)
        if norm > g.dx:
            step *= g.dx / norm
        accepted = False
        for _ in range(30):
            C2, G2, H2 = terms(y + step)
            if abs(C2) ** 2 >= f:
                y, C, G, H = y + step, C2, G2, H2
                accepted = True
                break
            step *= 0.5
        if not accepted or np.linalg.norm(step) <= 1e-12 * g.dx:
            break
    return tuple(float(v) for v in y)


def orbit_alignment(phi: FieldState, ref: FieldState) -> OrbitAlignment:
    """Closest point of ``{e^(i theta) ref(. - y)}`` to ``phi`` in ``H^1``.

    Box grids locate the best lattice translation by spectral cross-correlation
    of the ``H^1`` inner product, then refine it continuously by Newton steps
    on the modulus of that correlation; the distance is evaluated directly on
    the difference at each candidate (the unshifted one included).  Radial
    grids only carry the phase symmetry.
    """
    _same_grid(phi, ref)
    g = phi.grid
    if g.kind == "radial":
        ip = h1_inner(phi, ref)
        th = float(np.angle(ip)) if ip != 0 else 0.0
        d = (phi - ref * np.exp(1j * th)).h1_norm()
        return OrbitAlignment(d, (), th)

    ph, rh = g.fft(phi.values), g.fft(ref.values)
    w = 1.0 + g.k2
    A = w * ph * np.conj(rh)
    corr = sfft.ifftn(A, workers=1)  # sum_x <phi(x), ref(x - y)> over lattice y
    mag = np.abs(corr)
    j = np.unravel_index(int(np.argmax(mag)), mag.shape)

    def distance_at(shift):
        ks = np.meshgrid(*([g.k] * g.N), indexing="ij", sparse=True)
        phase_shift = np.exp(-1j * sum(kk * yy for kk, yy in zip(ks, shift)))
        shifted = rh * phase_shift
        ip = np.vdot(shifted, w * ph)
        th = float(np.angle(ip)) if ip != 0 else 0.0
        diff = ph - np.exp(1j * th) * shifted
        d2 = np.sum(w * np.abs(diff) ** 2) * g.cell / diff.size
        return math.sqrt(max(float(d2), 0.0)), th

    lattice = tuple(((ji + g.n // 2) % g.n - g.n // 2) * g.dx for ji in j)
    candidates = [tuple([0.0] * g.N), lattice, _refine_shift(g, A, lattice)]
    best = None
    for c in candidates:
        d, th = distance_at(c)
        if best is None or d < best.distance:
            best = OrbitAlignment(d, c, th)
    return best


def orbit_distance(phi: FieldState, ref: FieldState) -> float:
    return orbit_alignment(phi, ref).distance


# ---------------------------------------------------------------------------
# rearrangement and transfer between grids


def rearrange_radial(u: FieldState, target: RadialGrid | None = None,
                     refine: int = 2) -> FieldState:
    """Symmetric decreasing rearrangement of ``|u|`` on a radial grid.

    Radial input: the sorted values of ``|u|^2`` define a step function of
    enclosed volume and each output cell receives exactly the mass of that
    function over its own volume interval.  Mass is preserved to roundoff
    and an already decreasing field on the same grid comes back unchanged.

    Box input: a step function built from a few cells near the maximum would
    give a staircase profile with a spurious gradient, so the field is first
    spectrally upsampled by ``refine`` per axis, the decreasing profile is read
    off the piecewise-linear quantile function of enclosed volume, and the
    result is scaled to the input mass.  Mass beyond the volume covered by
    ``target`` is dropped before that scaling.
    """
    g = u.grid
    if target is None:
        if g.kind == "radial":
            target = g
        else:
            target = RadialGrid(g.N, 8 * g.n, g.L / 2 * math.sqrt(g.N))
    if target.N != g.N:
        raise GridMismatchError("rearrangement cannot change the dimension")
    W = np.concatenate([[0.0], np.cumsum(target.weights)])
    if g.kind == "radial":
        a2 = np.abs(u.values) ** 2
        order = np.argsort(-a2, kind="stable")
        dens = a2[order]
        V = np.concatenate([[0.0], np.cumsum(g.weights[order])])
        # merge the two partitions of the volume axis; every elementary piece
        # lies in one input cell and one output cell, so no prefix-sum
        # differences (and no cancellation) occur
        B = np.union1d(V, W)
        B = B[B <= W[-1]]
        mid = 0.5 * (B[:-1] + B[1:])
        k = np.searchsorted(V, mid) - 1
        i = np.searchsorted(W, mid) - 1
        piece = np.where(k < dens.size, dens[np.minimum(k, dens.size - 1)], 0.0) * np.diff(B)
        cell_mass = np.bincount(i, weights=piece, minlength=target.n)
        return FieldState(target, np.sqrt(cell_mass / np.diff(W)))

    fine = _upsample(u.values, refine) if refine > 1 else u.values
    cell = g.cell / refine ** g.N
    a = np.sort(np.abs(fine).ravel())[::-1]
    # lattice symmetry produces groups of (nearly) equal samples; a group
    # represents the level set crossing its volume band, so it gets a single
    # quantile node at the centre of that band
    new_group = np.concatenate([[True], a[1:] < a[:-1] * (1 - 1e-12)])
    starts = np.flatnonzero(new_group)
    ends = np.concatenate([starts[1:], [a.size]])
    Vq = np.concatenate([[0.0], 0.5 * (starts + ends) * cell])
    aq = np.concatenate([[a[0]], a[starts]])
    vals = np.interp(0.5 * (W[:-1] + W[1:]), Vq, aq, right=0.0)
    out = FieldState(target, vals)
    m_out = out.mass()
    if m_out > 0:
        out = out * math.sqrt(u.mass() / m_out)
    return out


def _upsample(values, factor):
    """Trigonometric interpolation onto a grid ``factor`` times finer per axis."""
    n = values.shape[0]
    N = values.ndim
    uh = np.fft.fftshift(np.fft.fftn(values))
    m = n * factor
    pad = [((m - n) // 2, (m - n) // 2)] * N
    big = np.pad(uh, pad)
    return np.fft.ifftn(np.fft.ifftshift(big)) * factor ** N


def to_box(u: FieldState, box: BoxGrid) -> FieldState:
    """Sample a radial field on a box by even cubic-spline interpolation."""
    if u.grid.kind != "radial":
        raise GridMismatchError("to_box expects a radial field")
    if u.grid.N != box.N:
        raise GridMismatchError("dimension mismatch")
    ev = _radial_interpolant(u.grid, u.values)
    return FieldState(box, ev(box.radius()))


def gaussian(grid: Grid, width: float = 1.0, amplitude: float = 1.0) -> FieldState:
    """``amplitude * exp(-|x|^2 / width^2)``."""
    return FieldState.from_function(grid, lambda r: amplitude * np.exp(-(r / width) ** 2))


def random_bumps(grid: Grid, rng: np.random.Generator, count: int | None = None,
                 complex_phase: bool = True) -> FieldState:
    """A smooth, well-resolved random field: a sum of Gaussian bumps.

    Radial grids get centred bumps of random width plus shells; box grids
    get off-centre bumps.  Widths stay between roughly 4 and 40 node
    spacings of the coarser of the two backends used in tests.
    """
    count = count or int(rng.integers(1, 5))
    vals = np.zeros(grid.shape, dtype=complex)
    if grid.kind == "radial":
        r = grid.r
        span = grid.rmax / 8
        for _ in range(count):
            amp = rng.uniform(0.1, 1.5) * (np.exp(2j * np.pi * rng.uniform()) if complex_phase else 1)
            width = rng.uniform(0.5, 0.5 + span / 4)
            centre = rng.uniform(0, span) if rng.uniform() < 0.5 else 0.0
            vals += amp * (np.exp(-((r - centre) / width) ** 2) + np.exp(-((r + centre) / width) ** 2))
    else:
        mesh = grid.mesh()
        span = grid.L / 8
        for _ in range(count):
            amp = rng.uniform(0.1, 1.5) * (np.exp(2j * np.pi * rng.uniform()) if complex_phase else 1)
            width = rng.uniform(max(3 * grid.dx, 0.5), max(3 * grid.dx, 0.5) + span / 2)
            centre = rng.uniform(-span, span, size=grid.N)
            d2 = sum((m - c) ** 2 for m, c in zip(mesh, centre))
            vals = vals + amp * np.exp(-d2 / width ** 2)
    return FieldState(grid, vals)
