"""Command-line front end.

Every subcommand reads an optional JSON config file, applies flag overrides,
validates the model hypotheses, writes its outputs atomically into the output
directory and finishes with ``manifest.json`` listing each file's SHA-256.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (partial
outputs, manifest marked partial), 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

from . import __version__
from .dynamics import evolve_splitstep, strichartz_report
from .errors import CritNLSError, DomainError, ParameterError
from .field import BoxGrid, RadialGrid, to_box
from .ground_state import SolverOptions, euler_lagrange_norm, minimize_local, polish_on_box
from .io import (
    OutputError,
    RunManifest,
    SnapshotError,
    TRACE_COLUMNS,
    constants_report,
    read_snapshot,
    write_csv,
    write_json,
    write_snapshot,
    write_trace,
)
from .landscape import ModelParams, build_constants, landscape_table
from .sharp_constants import ConstantsCache
from .stability import KINDS, PerturbationSpec, run_stability_experiment, sweep_delta
from .tolerances import TOL

log = logging.getLogger("critnls")

ENV_OUTPUT = "CRITNLS_OUTPUT_DIR"
DEFAULT_OUTPUT = "critnls-out"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("constants", "landscape", "ground-state", "evolve", "strichartz", "stability")


class ValidationError(CritNLSError):
    """A configuration value violates a model hypothesis; names the field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalFailure(CritNLSError):
    """A computation finished without meeting its contract."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    N: int = 3
    q: float = 2.5
    mu: float = 1.0
    seed: int = 0
    output: str | None = None
    options: dict = dc_field(default_factory=dict)

    def model(self) -> ModelParams:
        """Validate ``N >= 3``, ``2 < q < 2 + 4/N`` and ``mu > 0``."""
        try:
            N, q, mu = self.N, float(self.q), float(self.mu)
        except (TypeError, ValueError) as exc:
            raise ValidationError("params", f"q and mu must be numbers: {exc}") from exc
        if isinstance(N, bool) or not isinstance(N, (int, float)) or int(N) != N or N < 3:
            raise ValidationError("N", f"the dimension must be an integer >= 3, got {N!r}")
        N = int(N)
        if not math.isfinite(q) or q <= 2:
            raise ValidationError("q", f"q must exceed 2, got {q}")
        if q >= 2 + 4 / N:
            raise ValidationError(
                "q", f"q must be strictly below the mass-critical exponent 2 + 4/N = {2 + 4 / N:.17g}, got {q}")
        if not math.isfinite(mu) or mu <= 0:
            raise ValidationError("mu", f"mu must be positive, got {mu}")
        return ModelParams(N, q, mu)

    def output_dir(self) -> Path:
        return Path(self.output or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT)

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("output")
        out["tolerances"] = asdict(TOL)
        return out


def _merge_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OutputError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError("config", f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config", "the config file must hold a JSON object")
    top = {k: data.pop(k) for k in ("N", "q", "mu", "seed", "output") if k in data}
    options = dict(data.pop("options", {}))
    options.update({k: v for k, v in data.items() if k != "command"})
    for k in ("N", "q", "mu", "seed", "output"):
        v = getattr(args, k, None)
        if v is not None:
            top[k] = v
    for k, v in vars(args).items():
        if k in ("N", "q", "mu", "seed", "output", "config", "command", "verbose") or v is None:
            continue
        options[k] = v
    return RunConfig(command=args.command, options=options, **top)


def _opt(config: RunConfig, name: str, default=None):
    return config.options.get(name, default)


def _mass(config: RunConfig, constants, default_frac: float | None = 0.5) -> float:
    c = _opt(config, "c")
    frac = _opt(config, "c_frac")
    if c is None:
        c = (default_frac if frac is None else frac) * constants.c0
    c = float(c)
    if not 0 < c < constants.c0:
        raise ValidationError(
            "c", f"c = {c:.17g} must satisfy 0 < c < c0 = {constants.c0:.17g}; "
                 "local minimisers are sought only below the threshold mass c0")
    return c


# ---------------------------------------------------------------------------
# subcommands


def _snapshot_meta(config: RunConfig, params: ModelParams, **extra) -> dict:
    meta = {"params": {"N": params.N, "q": params.q, "mu": params.mu},
            "provenance": {"program": "critnls", "version": __version__, "command": config.command}}
    if _opt(config, "stamp"):
        meta["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    meta.update(extra)
    return meta


def _cmd_constants(config, params, constants, out: Path, manifest: RunManifest):
    manifest.add(write_json(out / "constants.json", constants_report(params, constants)))


def _cmd_landscape(config, params, constants, out, manifest):
    cs = _opt(config, "c")
    if cs is None:
        fracs = _opt(config, "c_frac")
        if fracs is None:
            n = int(_opt(config, "count", 16))
            fracs = [(i + 1) / (n + 1) for i in range(n)]
        cs = [float(x) * constants.c0 for x in fracs]
    for c in cs:
        if not c > 0:
            raise ValidationError("c", f"masses must be positive, got {c}")
    rows = landscape_table(params, constants, cs)
    manifest.add(write_csv(out / "landscape.csv", ("c", "rho_c", "max_g", "f_at_rho0"), rows))


def _ground_state(config, params, constants):
    """Radial minimiser on the default (self-widening) or a given radial grid, optionally polished on a box."""
    c = _mass(config, constants)
    opts = SolverOptions(max_iter=int(_opt(config, "max_iter", 20000)),
                         tol=float(_opt(config, "tol", TOL.solver_residual)))
    kind = _opt(config, "grid", "radial")
    n, extent = _opt(config, "n"), _opt(config, "extent")
    if (n is None) != (extent is None):
        raise ValidationError("grid", "give both --n and --extent, or neither")
    if kind == "box":
        if n is None:
            raise ValidationError("grid", "a box ground state needs --n and --extent")
        res = minimize_local(params, constants, c, opts)
        if res.converged:
            res = polish_on_box(params, constants, res, BoxGrid(params.N, int(n), float(extent)), opts)
        return c, res
    grid = RadialGrid(params.N, int(n), float(extent)) if n is not None else None
    return c, minimize_local(params, constants, c, opts, grid=grid)


def _cmd_ground_state(config, params, constants, out, manifest):
    c, res = _ground_state(config, params, constants)
    summary = {
        "c": c, "m_c": res.m_c, "lambda": res.lam, "pohozaev": res.pohozaev_residual,
        "grad": res.grad, "rho0": constants.rho0, "grad_cap_ok": res.grad_cap_ok,
        "iterations": res.iterations, "converged": res.converged, "residual": res.residual,
        "euler_lagrange": euler_lagrange_norm(res, params), "message": res.message,
        "grid": res.field.grid.descriptor(),
    }
    for p in write_snapshot(out / "ground_state.snap", res.field,
                            _snapshot_meta(config, params, c=c, m_c=res.m_c, lam=res.lam)):
        manifest.add(p)
    manifest.add(write_json(out / "ground_state.json", summary))
    if not res.converged:
        raise NumericalFailure(f"ground-state solver did not converge: {res.message}")


def _load_box_field(config, params, key: str):
    path = _opt(config, key)
    if not path:
        raise ValidationError(key, f"--{key} snapshot path is required")
    u, meta = read_snapshot(path)
    if u.grid.N != params.N:
        raise ValidationError(key, f"snapshot dimension {u.grid.N} differs from N = {params.N}")
    if u.grid.kind == "radial":
        n, L = _opt(config, "box_n"), _opt(config, "box_L")
        if not n or not L:
            raise ValidationError(key, "radial snapshot: give --box-n and --box-L to transfer it to a box")
        u = to_box(u, BoxGrid(params.N, int(n), float(L)))
    return u, meta


def _cmd_evolve(config, params, constants, out, manifest):
    u, _ = _load_box_field(config, params, "datum")
    ref = _load_box_field(config, params, "reference")[0] if _opt(config, "reference") else None
    every = int(_opt(config, "snapshot_every", 0))
    snaps = []

    def on_sample(i, field):
        if every and i % every == 0:
            snaps.extend(write_snapshot(out / f"field_{i:06d}.snap", field,
                                        _snapshot_meta(config, params, sample=i)))

    tr = evolve_splitstep(u, params, float(_opt(config, "T", 1.0)), float(_opt(config, "dt", 1e-3)),
                          stride=int(_opt(config, "stride", 10)), ceiling=_opt(config, "ceiling"),
                          reference=ref, rho0=constants.rho0, on_sample=on_sample)
    manifest.add(write_trace(out / "trace.csv", tr))
    for p in snaps:
        manifest.add(p)
    if tr.blowup:
        raise NumericalFailure(f"blow-up detected: {tr.message}")


def _cmd_strichartz(config, params, constants, out, manifest):
    u, _ = _load_box_field(config, params, "datum")
    rep = strichartz_report(u, params, float(_opt(config, "T", 0.05)), int(_opt(config, "time_nodes", 65)))
    manifest.add(write_json(out / "strichartz.json", rep.as_dict()))


def _cmd_stability(config, params, constants, out, manifest):
    u, _ = _load_box_field(config, params, "gs")
    c = u.mass()
    if not 0 < c < constants.c0:
        raise ValidationError("gs", f"ground-state mass {c:.17g} is not below c0 = {constants.c0:.17g}")
    # certify the stored field as a converged box minimiser (a no-op descent if it already is)
    gs = minimize_local(params, constants, c, grid=u.grid, init=u)
    if not gs.converged:
        raise NumericalFailure(f"the stored ground state does not re-converge: {gs.message}")
    deltas = [float(d) for d in (_opt(config, "deltas") or [1e-2, 5e-3, 2.5e-3])]
    kind = _opt(config, "kind", "random-H1")
    run_opts = {"window": float(_opt(config, "window", 0.5))}
    T_sim, dt = float(_opt(config, "T_sim", 10.0)), float(_opt(config, "dt", 0.005))
    try:
        sweep = sweep_delta(gs, deltas, params, constants, T_sim=T_sim, dt=dt,
                            trials=int(_opt(config, "trials", 3)), seed=config.seed, kind=kind, **run_opts)
    except ParameterError as exc:
        raise ValidationError("deltas", str(exc)) from exc
    reports = list(sweep)
    if _opt(config, "control"):
        reports.insert(0, run_stability_experiment(gs, PerturbationSpec(kind, 0.0, config.seed), params,
                                                   constants, T_sim, dt, **run_opts))
    rows = [r.row() for r in reports]
    header = list(rows[0]) if rows else ["delta", "seed", "kind", "sup_distance"]
    manifest.add(write_csv(out / "stability.csv", header, [[row[h] for h in header] for row in rows]))
    summary = {
        "worst_sup_distance": [{"delta": d, "sup_distance": s} for d, s in sweep.worst],
        "trend_nonincreasing_within_slack": sweep.trend_ok, "slack": sweep.slack,
        "blowups": sum(r.blowup for r in reports), "cap_violations": sum(r.cap_violated for r in reports),
        "candidate_second_orbits": sum(r.candidate_second_orbit for r in reports),
        "caveat": reports[0].caveat if reports else "",
    }
    manifest.add(write_json(out / "stability.json", summary))


HANDLERS = {
    "constants": _cmd_constants,
    "landscape": _cmd_landscape,
    "ground-state": _cmd_ground_state,
    "evolve": _cmd_evolve,
    "strichartz": _cmd_strichartz,
    "stability": _cmd_stability,
}


def dispatch(config: RunConfig) -> RunManifest:
    """Validate ``config``, run its subcommand and write the manifest.

    Raises :class:`ValidationError` before anything is written, and
    :class:`NumericalFailure` or :class:`OutputError` after writing a manifest
    with ``status = "partial"``.
    """
    if config.command not in HANDLERS:
        raise ValidationError("command", f"unknown subcommand {config.command!r}; expected one of {COMMANDS}")
    params = config.model()
    cache = ConstantsCache(_opt(config, "cache")) if _opt(config, "cache") else None
    constants = build_constants(params, cache=cache)
    out = config.output_dir()
    manifest = RunManifest(config.command, config.echo(), __version__, constants_report(params, constants))
    start = time.perf_counter()
    try:
        HANDLERS[config.command](config, params, constants, out, manifest)
    except (NumericalFailure, OutputError, SnapshotError) as exc:
        manifest.status, manifest.error = "partial", str(exc)
        manifest.wall_time = time.perf_counter() - start
        try:
            manifest.write(out)
        except OutputError:
            log.error("could not write the partial manifest into %s", out)
        raise
    manifest.wall_time = time.perf_counter() - start
    manifest.write(out)
    return manifest


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str):
    return [float(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--N", type=int, help="spatial dimension (>= 3, default 3)")
    common.add_argument("--q", type=float, help="subcritical power, 2 < q < 2 + 4/N (default 2.5)")
    common.add_argument("--mu", type=float, help="coupling mu > 0 (default 1)")
    common.add_argument("--seed", type=int, help="master seed for all randomness (default 0)")
    common.add_argument("--output", help=f"output directory (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--cache", help="sharp-constants cache file")
    common.add_argument("--stamp", action="store_true", default=None,
                        help="add a timestamp to snapshot metadata (breaks digest reproducibility)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="critnls", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"critnls {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("constants", parents=[common], help="sharp constants and threshold mass")

    s = sub.add_parser("landscape", parents=[common], help="CSV of rho_c, max g_c and f(c, rho0)")
    s.add_argument("--c", type=_floats, help="absolute masses, comma separated")
    s.add_argument("--c-frac", dest="c_frac", type=_floats, help="masses as fractions of c0")
    s.add_argument("--count", type=int, help="number of equally spaced fractions of c0 (default 16)")

    s = sub.add_parser("ground-state", parents=[common], help="local minimiser at mass c")
    s.add_argument("--c", type=float, help="mass (default c0/2)")
    s.add_argument("--c-frac", dest="c_frac", type=float, help="mass as a fraction of c0")
    s.add_argument("--grid", choices=("radial", "box"), help="grid kind (default radial)")
    s.add_argument("--n", type=int, help="nodes (radial) or nodes per axis (box)")
    s.add_argument("--extent", type=float, help="rmax (radial) or box side L")
    s.add_argument("--max-iter", dest="max_iter", type=int)
    s.add_argument("--tol", type=float, help="projected-gradient residual tolerance")

    def field_inputs(s, name, helptext):
        s.add_argument(f"--{name}", help=helptext)
        s.add_argument("--box-n", dest="box_n", type=int, help="box nodes per axis for radial snapshots")
        s.add_argument("--box-L", dest="box_L", type=float, help="box side for radial snapshots")

    s = sub.add_parser("evolve", parents=[common], help="split-step evolution of a snapshot")
    field_inputs(s, "datum", "initial datum snapshot")
    s.add_argument("--reference", help="snapshot whose orbit distance is tracked")
    s.add_argument("--T", type=float, help="final time (default 1)")
    s.add_argument("--dt", type=float, help="time step (default 1e-3)")
    s.add_argument("--stride", type=int, help="steps between samples (default 10)")
    s.add_argument("--ceiling", type=float, help="blow-up ceiling on ||grad u||^2")
    s.add_argument("--snapshot-every", dest="snapshot_every", type=int, help="write a field every k samples")

    s = sub.add_parser("strichartz", parents=[common], help="space-time norms of the free flow")
    field_inputs(s, "datum", "datum snapshot")
    s.add_argument("--T", type=float, help="time horizon (default 0.05)")
    s.add_argument("--time-nodes", dest="time_nodes", type=int, help="Simpson nodes (default 65)")

    s = sub.add_parser("stability", parents=[common], help="perturb-and-evolve sweep around a ground state")
    field_inputs(s, "gs", "box ground-state snapshot")
    s.add_argument("--deltas", type=_floats, help="decreasing perturbation sizes (default 1e-2,5e-3,2.5e-3)")
    s.add_argument("--trials", type=int, help="seeded trials per delta (default 3)")
    s.add_argument("--kind", choices=KINDS)
    s.add_argument("--T-sim", dest="T_sim", type=float, help="simulated time (default 10)")
    s.add_argument("--dt", type=float, help="time step (default 0.005)")
    s.add_argument("--window", type=float, help="window length (default 0.5)")
    s.add_argument("--control", action="store_true", default=None, help="also run the unperturbed state")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _merge_config(args)
        manifest = dispatch(config)
    except (ValidationError, ParameterError, DomainError) as exc:
        print(f"critnls: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OutputError, SnapshotError) as exc:
        print(f"critnls: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailure as exc:
        print(f"critnls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CritNLSError as exc:
        print(f"critnls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for o in manifest.outputs:
        print(f"{o['sha256'][:16]}  {config.output_dir() / o['path']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
