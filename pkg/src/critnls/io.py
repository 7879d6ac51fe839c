"""Persistence: binary field snapshots, CSV/JSON reports and run manifests.

Snapshot layout (all little-endian)::

    magic    8 bytes   b"CRITNLS\\0"
    version  uint32
    kind     uint32    0 = radial, 1 = box
    N        uint32    spatial dimension
    ndim     uint32    number of array axes
    dims     ndim x uint64
    extent   float64   rmax (radial) or side length L (box)
    data     prod(dims) x complex128

A companion ``<snapshot>.json`` carries parameters and provenance.  Every
file is written to a temporary name and renamed into place.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CritNLSError
from .field import BoxGrid, FieldState, RadialGrid

MAGIC = b"CRITNLS\x00"
VERSION = 1
_KINDS = {"radial": 0, "box": 1}
_HEAD = struct.Struct("<8sIIII")


class SnapshotError(CritNLSError):
    """A snapshot file is malformed or of an unsupported version."""


class OutputError(CritNLSError, OSError):
    """Writing an output file failed; the message names the path."""


# ---------------------------------------------------------------------------
# atomic writes and digests


def atomic_write(path, data: bytes) -> Path:
    """Write ``data`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# snapshots


def snapshot_bytes(u: FieldState) -> bytes:
    g = u.grid
    values = np.ascontiguousarray(u.values, dtype="<c16")
    extent = g.rmax if g.kind == "radial" else g.L
    head = _HEAD.pack(MAGIC, VERSION, _KINDS[g.kind], g.N, values.ndim)
    dims = struct.pack(f"<{values.ndim}Q", *values.shape)
    return head + dims + struct.pack("<d", extent) + values.tobytes()


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def json_text(data) -> str:
    """Stable, human-readable JSON (sorted keys, full float precision)."""
    return json.dumps(data, indent=2, sort_keys=True, default=_jsonable, allow_nan=True) + "\n"


def write_snapshot(path, u: FieldState, metadata: dict | None = None) -> list[Path]:
    """Write the binary snapshot and its ``.json`` companion; returns both paths."""
    path = Path(path)
    atomic_write(path, snapshot_bytes(u))
    meta = {"format": "critnls-snapshot", "version": VERSION, "grid": u.grid.descriptor()}
    meta.update(metadata or {})
    side = path.with_name(path.name + ".json")
    atomic_write(side, json_text(meta).encode())
    return [path, side]


def read_snapshot(path) -> tuple[FieldState, dict]:
    """Read a snapshot (and its companion metadata if present)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(raw) < _HEAD.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, kind, N, ndim = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: not a critnls snapshot")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version}")
    off = _HEAD.size
    dims = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    (extent,) = struct.unpack_from("<d", raw, off)
    off += 8
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - off != 16 * count:
        raise SnapshotError(f"{path}: expected {count} complex values, found {(len(raw) - off) / 16:g}")
    values = np.frombuffer(raw, dtype="<c16", count=count, offset=off).reshape(dims)
    if kind == _KINDS["radial"]:
        if ndim != 1:
            raise SnapshotError(f"{path}: radial snapshot must be one-dimensional")
        grid = RadialGrid(N, dims[0], extent)
    elif kind == _KINDS["box"]:
        if ndim != N or len(set(dims)) != 1:
            raise SnapshotError(f"{path}: box snapshot must be a cube of dimension N")
        grid = BoxGrid(N, dims[0], extent)
    else:
        raise SnapshotError(f"{path}: unknown grid kind {kind}")
    side = path.with_name(path.name + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return FieldState(grid, values), meta


# ---------------------------------------------------------------------------
# tabular and scalar reports


def csv_text(header, rows) -> str:
    """CSV with a header row; floats in 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write(path, csv_text(header, rows).encode())


def write_json(path, data) -> Path:
    return atomic_write(path, json_text(data).encode())


TRACE_COLUMNS = ("t", "mass", "energy", "grad", "dist")


def write_trace(path, trace) -> Path:
    """An evolution trace as CSV with columns ``t, mass, energy, grad, dist``."""
    return write_csv(path, TRACE_COLUMNS, trace.rows())


def constants_report(params, constants) -> dict:
    return {
        "N": params.N, "q": params.q, "mu": params.mu,
        "S": constants.sobolev.value, "C": constants.gn.value, "beta": constants.gn.beta,
        "K": constants.K, "c0": constants.c0, "rho0": constants.rho0, "beta0": constants.beta0,
    }


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    """What a run did and what it wrote.

    ``status`` is ``"complete"`` or ``"partial"``; partial runs carry the
    reason in ``error``.  ``outputs`` lists every emitted file with its
    SHA-256 digest and size.
    """

    command: str
    config: dict
    version: str
    constants: dict = dc_field(default_factory=dict)
    outputs: list = dc_field(default_factory=list)
    status: str = "complete"
    error: str = ""
    wall_time: float = 0.0

    def add(self, path) -> None:
        path = Path(path)
        self.outputs.append({"path": path.name, "sha256": digest(path), "bytes": path.stat().st_size})

    def digests(self) -> dict:
        return {o["path"]: o["sha256"] for o in self.outputs}

    def write(self, directory) -> Path:
        return write_json(Path(directory) / "manifest.json", asdict(self))

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))
