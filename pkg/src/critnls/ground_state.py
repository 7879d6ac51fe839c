"""Local minimisation of the energy on the mass sphere inside the gradient ball.

``m(c) = inf { F(u) : ||u||_2^2 = c, ||grad u||_2^2 < rho0 }`` is approached by
preconditioned gradient descent.  Each trial step is followed by the
multiplicative mass rescale ``u -> sqrt(c / ||u||^2) u``; a trial that leaves
the gradient ball counts as a failed step and is shrunk, exactly like a trial
that fails the Armijo test.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DomainError, ParameterError
from .field import (
    BoxGrid,
    FieldState,
    _radial_interpolant,
    FunctionalReport,
    Grid,
    RadialGrid,
    dilate,
    functionals,
    theta_zeros,
    to_box,
    variational_gradient,
)
from .landscape import LandscapeConstants, ModelParams, f as landscape_f
from .tolerances import TOL

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of :func:`minimize_local`.

    ``initial_scale`` is the dilation ``s`` applied to the unit Gaussian
    ``exp(-|x|^2)`` (after normalising its mass); ``None`` picks the first
    zero of the fibre function ``theta``, where the fibre energy is lowest.
    ``shift`` is the spectral shift of the preconditioner ``(shift - Delta)^-1``;
    ``None`` tracks ``-lambda`` of the current iterate.
    """

    step: float = 1.0
    backtrack: float = 0.5
    growth: float = 1.5
    armijo: float = 1e-4
    tol: float = TOL.solver_residual
    max_iter: int = 20000
    initial_scale: float | None = None
    shift: float | None = None
    min_shift: float = 1e-2
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.step > 0:
            raise ParameterError("step size must be positive")
        if not 0 < self.backtrack < 1:
            raise ParameterError("backtracking factor must lie in (0, 1)")
        if not self.tol > 0:
            raise ParameterError("tolerance must be positive")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be at least 1")
        if self.initial_scale is not None and not self.initial_scale > 0:
            raise ParameterError("initial_scale must be positive")


@dataclass(frozen=True, eq=False)
class GroundStateResult:
    field: FieldState
    m_c: float
    lam: float
    pohozaev_residual: float
    grad_cap_ok: bool
    iterations: int
    converged: bool
    mass: float
    residual: float
    report: FunctionalReport
    energy_history: np.ndarray = dc_field(repr=False)
    message: str = ""

    @property
    def grad(self) -> float:
        return self.report.grad


def default_radial_grid(N: int) -> RadialGrid:
    return RadialGrid(N, 8000, 80.0)


def initial_gaussian(grid: Grid, params: ModelParams, c: float, rho0: float,
                     scale: float | None = None) -> FieldState:
    """Mass-``c`` Gaussian dilated to the bottom of its fibre (or to ``scale``)."""
    unit = FieldState.from_function(grid, lambda r: np.exp(-r * r))
    amp = math.sqrt(c / unit.mass())
    rep = functionals(unit * amp, params)
    if scale is None:
        zeros = theta_zeros(rep, params)
        if zeros:
            scale = zeros[0]
        else:
            # fibre has no interior minimum; take the largest s inside the ball
            scale = 0.5 * math.sqrt(rho0 / rep.grad)
        if scale * scale * rep.grad >= rho0:
            scale = 0.5 * math.sqrt(rho0 / rep.grad)
    u = FieldState.from_function(grid, lambda r: scale ** (grid.N / 2) * np.exp(-(scale * r) ** 2))
    return u * math.sqrt(c / u.mass())


def _rescale(values, grid, c):
    m = grid.integrate(np.abs(values) ** 2)
    return values * math.sqrt(c / m)


def recenter(u: FieldState) -> FieldState:
    """Translate a box field so the centroid of ``|u|^2`` sits at the origin.

    Periodic centroid: the argument of the first Fourier mode of ``|u|^2`` per axis.
    """
    g = u.grid
    if g.kind != "box":
        return u
    dens = np.abs(u.values) ** 2
    shift = []
    for axis in range(g.N):
        marg = dens.sum(axis=tuple(a for a in range(g.N) if a != axis))
        z = np.sum(marg * np.exp(2j * np.pi * (g.x - g.x[0]) / g.L))
        centre = g.x[0] + np.angle(z) * g.L / (2 * np.pi)
        centre = (centre + g.L / 2) % g.L - g.L / 2
        shift.append(centre)
    ks = np.meshgrid(*([g.k] * g.N), indexing="ij", sparse=True)
    phase = np.exp(1j * sum(k * y for k, y in zip(ks, shift)))
    return u.with_values(g.ifft(g.fft(u.values) * phase))


def minimize_local(params: ModelParams, constants: LandscapeConstants, c: float,
                   opts: SolverOptions | None = None, grid: Grid | None = None,
                   init: FieldState | None = None) -> GroundStateResult:
    """Minimise the energy over ``{||u||^2 = c, ||grad u||^2 < rho0}``.

    Returns ``converged=False`` with the last iterate and a message when the
    iteration budget runs out or no admissible step can be found.
    """
    opts = opts or SolverOptions()
    if not 0 < c < constants.c0:
        raise DomainError(f"mass must lie in (0, c0) = (0, {constants.c0}), got {c}")
    if grid is None and init is None:
        # default radial grid: widen it until the minimiser's tail is negligible
        grid = default_radial_grid(params.N)
        for _ in range(3):
            result = _minimize(params, constants, c, opts, grid, None if _ == 0 else init)
            if result.field.tail_fraction() <= TOL.tail_mass:
                return result
            grid = RadialGrid(grid.N, 2 * grid.n, 2 * grid.rmax)
            init = resample_radial(result.field, grid)
        return _minimize(params, constants, c, opts, grid, init)
    return _minimize(params, constants, c, opts, grid or init.grid, init)


def resample_radial(u: FieldState, grid: RadialGrid) -> FieldState:
    """Carry a radial field to another radial grid (zero beyond the old extent)."""
    return FieldState(grid, _radial_interpolant(u.grid, u.values)(grid.r))


def _minimize(params, constants, c, opts, grid, init) -> GroundStateResult:
    if grid.N != params.N:
        raise ParameterError("grid dimension differs from the model dimension")
    rho0 = constants.rho0

    if init is None:
        u = initial_gaussian(grid, params, c, rho0, opts.initial_scale)
    else:
        if init.grid != grid:
            raise ParameterError("initial field lives on a different grid")
        u = init
    v = _rescale(u.values, grid, c)
    u = FieldState(grid, v)
    rep = functionals(u, params)
    if rep.grad >= rho0:
        raise DomainError("initial field lies outside the gradient ball")

    history = [rep.energy]
    tau = opts.step
    kappa = None
    solver = None
    message = "iteration budget exhausted"
    converged = False
    res = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        gradF = variational_gradient(u, params).values
        lam = rep.multiplier
        G = gradF - lam * v
        res = math.sqrt(grid.integrate(np.abs(G) ** 2) / rep.mass)
        if res <= opts.tol:
            converged = True
            message = "converged"
            it -= 1
            break
        want = opts.shift if opts.shift is not None else max(-lam, opts.min_shift)
        if kappa is None or abs(want - kappa) > 0.05 * kappa:
            kappa = want
            solver = grid.resolvent(kappa)
        # preconditioned residual, projected L2-orthogonally to u; working with
        # G rather than grad F avoids cancelling the large lambda*u component
        PG = solver(G)
        Pu = solver(v)
        beta = grid.inner(PG, v).real / grid.inner(Pu, v).real
        d = -(PG - beta * Pu)
        slope = grid.inner(G, d).real
        if slope >= 0:
            message = "search direction is not a descent direction"
            break
        slack = 16 * np.finfo(float).eps * (abs(rep.energy) + rep.grad)
        accepted = False
        for _ in range(opts.max_backtracks):
            trial = _rescale(v + tau * d, grid, c)
            trial_u = FieldState(grid, trial)
            trial_rep = functionals(trial_u, params)
            if trial_rep.grad < rho0 and trial_rep.energy <= rep.energy + opts.armijo * tau * slope + slack:
                accepted = True
                break
            tau *= opts.backtrack
        if not accepted:
            message = "line search failed"
            break
        u, v, rep = trial_u, trial, trial_rep
        history.append(rep.energy)
        tau = min(tau * opts.growth, opts.step)

    if grid.kind == "box":
        u = recenter(u)
        rep = functionals(u, params)
    cap_ok = rep.grad < rho0
    converged = converged and cap_ok
    return GroundStateResult(
        field=u, m_c=rep.energy, lam=rep.multiplier, pohozaev_residual=rep.pohozaev,
        grad_cap_ok=cap_ok, iterations=it, converged=converged, mass=rep.mass,
        residual=res, report=rep, energy_history=np.array(history), message=message)


def euler_lagrange_norm(result: GroundStateResult, params: ModelParams) -> float:
    """``||grad F(u) - lambda u||_2 / ||u||_2`` recomputed from the stored field."""
    u = result.field
    lam = functionals(u, params).multiplier
    G = variational_gradient(u, params).values - lam * u.values
    return math.sqrt(u.grid.integrate(np.abs(G) ** 2) / u.mass())


def polish_on_box(params: ModelParams, constants: LandscapeConstants, radial: GroundStateResult,
                  box: BoxGrid, opts: SolverOptions | None = None) -> GroundStateResult:
    """Transfer a radial minimiser to a periodic box and continue descending there."""
    init = to_box(radial.field, box)
    return minimize_local(params, constants, radial.mass, opts, grid=box, init=init)


# ---------------------------------------------------------------------------
# the curve c -> m(c) and its structural checks


@dataclass(frozen=True, eq=False)
class MCurvePoint:
    c: float
    m: float
    converged: bool
    result: GroundStateResult | None
    error: str = ""


def m_curve(params: ModelParams, constants: LandscapeConstants, c_grid,
            opts: SolverOptions | None = None, grid: Grid | None = None) -> list:
    """``m(c)`` along ``c_grid``, warm-starting each point from its predecessor."""
    out = []
    prev = None
    for c in c_grid:
        c = float(c)
        try:
            init = None
            if prev is not None and prev.converged:
                init = prev.field.with_values(_rescale(prev.field.values, prev.field.grid, c))
                if functionals(init, params).grad >= constants.rho0:
                    init = None
            res = minimize_local(params, constants, c, opts, grid=grid, init=init)
            out.append(MCurvePoint(c, res.m_c, res.converged, res, "" if res.converged else res.message))
            prev = res
        except (DomainError, ParameterError) as exc:
            out.append(MCurvePoint(c, math.nan, False, None, str(exc)))
            prev = None
    return out


@dataclass(frozen=True)
class SubadditivityReport:
    m_alpha: float
    m_rest: float
    m_c: float
    gap: float
    tol: float
    holds: bool
    strict: bool


def check_subadditivity(m_alpha: GroundStateResult, m_rest: GroundStateResult,
                        m_c: GroundStateResult, tol: float = 1e-8) -> SubadditivityReport:
    """``m(c) <= m(alpha) + m(c - alpha)``, strict beyond ``tol``."""
    for r in (m_alpha, m_rest, m_c):
        if not r.converged:
            raise DomainError("subadditivity needs three converged minimisations")
    gap = m_alpha.m_c + m_rest.m_c - m_c.m_c
    return SubadditivityReport(m_alpha.m_c, m_rest.m_c, m_c.m_c, gap, tol,
                               holds=gap >= -tol, strict=gap > tol)


def theta_scaling_holds(m_alpha: GroundStateResult, m_theta_alpha: GroundStateResult,
                        theta: float, tol: float = 1e-8) -> bool:
    """``m(theta alpha) <= theta m(alpha)`` for ``theta > 1``."""
    if not theta > 1:
        raise ParameterError("theta must exceed 1")
    return m_theta_alpha.m_c <= theta * m_alpha.m_c + tol


@dataclass(frozen=True)
class BoundarySample:
    scale: float
    grad: float
    energy: float
    lower_bound: float


def boundary_sample(params: ModelParams, constants: LandscapeConstants,
                    result: GroundStateResult) -> BoundarySample:
    """Dilate the minimiser onto the sphere ``||grad u||^2 = rho0``.

    The energy there is bounded below by ``rho0 f(c, rho0)``, positive for
    ``c < c0``: the ball boundary is an energy barrier.
    """
    u = result.field
    s = math.sqrt(constants.rho0 / u.grad())
    us = dilate(u, s)
    rep = functionals(us, params)
    bound = constants.rho0 * landscape_f(params, constants, rep.mass, constants.rho0)
    return BoundarySample(s, rep.grad, rep.energy, bound)
