import csv
import json
import os

import numpy as np
import pytest

from critnls import cli
from critnls.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, RunConfig, ValidationError, dispatch, main
from critnls.dynamics import EvolutionTrace
from critnls.field import BoxGrid, FieldState, RadialGrid, gaussian, random_bumps
from critnls.io import (
    MAGIC,
    OutputError,
    RunManifest,
    SnapshotError,
    atomic_write,
    constants_report,
    csv_text,
    digest,
    read_snapshot,
    snapshot_bytes,
    write_snapshot,
    write_trace,
)


def outputs(directory):
    return sorted(p.name for p in directory.iterdir() if p.name != "manifest.json")


def manifest_of(directory):
    return RunManifest.read(directory / "manifest.json")


class TestSnapshots:
    @pytest.mark.parametrize("grid", [RadialGrid(3, 300, 12.0), BoxGrid(3, 16, 10.0)], ids=["radial", "box"])
    def test_round_trip_bit_identical(self, tmp_path, grid):
        u = random_bumps(grid, np.random.default_rng(0))
        paths = write_snapshot(tmp_path / "u.snap", u, {"note": "test"})
        v, meta = read_snapshot(paths[0])
        assert v.grid == u.grid
        assert v.values.tobytes() == u.values.tobytes()
        assert meta["note"] == "test" and meta["grid"] == grid.descriptor()

    def test_header_layout(self):
        u = gaussian(BoxGrid(3, 8, 4.0))
        raw = snapshot_bytes(u)
        assert raw[:8] == MAGIC == b"CRITNLS\x00"
        assert len(raw) == 8 + 4 * 4 + 3 * 8 + 8 + 16 * 8 ** 3
        assert np.frombuffer(raw[-16 * 8 ** 3:], dtype="<c16").reshape(8, 8, 8).tobytes() == u.values.tobytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.snap"
        p.write_bytes(b"NOTASNAP" + bytes(64))
        with pytest.raises(SnapshotError):
            read_snapshot(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.snap"
        write_snapshot(p, gaussian(RadialGrid(3, 50, 5.0)))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(SnapshotError):
            read_snapshot(p)

    def test_unknown_version(self, tmp_path):
        p = tmp_path / "x.snap"
        raw = bytearray(snapshot_bytes(gaussian(RadialGrid(3, 50, 5.0))))
        raw[8] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(SnapshotError, match="version"):
            read_snapshot(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OutputError, match="nope.snap"):
            read_snapshot(tmp_path / "nope.snap")


class TestReports:
    def test_csv_17_digits(self):
        x = 0.1 + 0.2
        text = csv_text(["a", "b"], [(x, 1)])
        rows = list(csv.reader(text.splitlines()))
        assert rows[0] == ["a", "b"]
        assert float(rows[1][0]) == x and rows[1][0] == "0.30000000000000004"

    def test_trace_schema(self, tmp_path):
        u = gaussian(BoxGrid(3, 8, 4.0))
        z = np.array([0.0, 0.5])
        tr = EvolutionTrace(z, z + 1, z - 1, z + 2, z * np.nan, np.zeros(2, bool), 0.5, 1, u)
        text = write_trace(tmp_path / "t.csv", tr).read_text().splitlines()
        assert text[0] == "t,mass,energy,grad,dist"
        assert text[2] == "0.5,1.5,-0.5,2.5,nan"

    def test_empty_trace_is_header_only(self, tmp_path):
        tr = EvolutionTrace.empty(gaussian(BoxGrid(3, 8, 4.0)))
        assert write_trace(tmp_path / "t.csv", tr).read_text() == "t,mass,energy,grad,dist\n"

    def test_constants_report_schema(self, params, constants):
        rep = constants_report(params, constants)
        for key in ("K", "c0", "rho0", "beta0", "S", "C"):
            assert key in rep
        assert rep["c0"] == constants.c0

    def test_atomic_write_failure_names_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OutputError, match="file"):
            atomic_write(blocker / "sub" / "out.txt", b"data")

    def test_atomic_write_leaves_no_temporaries(self, tmp_path):
        atomic_write(tmp_path / "a.txt", b"1")
        atomic_write(tmp_path / "a.txt", b"2")
        assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
        assert (tmp_path / "a.txt").read_bytes() == b"2"


class TestValidation:
    def test_mass_critical_q_rejected(self):
        with pytest.raises(ValidationError, match="q must be strictly below the mass-critical exponent"):
            RunConfig("constants", N=3, q=2 + 4 / 3).model()

    @pytest.mark.parametrize("field,kwargs", [("N", {"N": 2}), ("N", {"N": 3.5}), ("q", {"q": 2.0}),
                                              ("mu", {"mu": 0.0}), ("mu", {"mu": -1.0})])
    def test_ranges_named(self, field, kwargs):
        with pytest.raises(ValidationError) as exc:
            RunConfig("constants", **kwargs).model()
        assert exc.value.field == field

    def test_threshold_mass_rejected(self, tmp_path, capsys, constants):
        code = main(["ground-state", "--c", str(constants.c0), "--output", str(tmp_path / "o")])
        assert code == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "c0" in err and "threshold" in err
        assert not (tmp_path / "o").exists()

    def test_cli_q_gate(self, tmp_path, capsys):
        assert main(["constants", "--q", str(2 + 4 / 3), "--output", str(tmp_path)]) == EXIT_VALIDATION
        assert "mass-critical exponent" in capsys.readouterr().err

    def test_bad_config_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["constants", "--config", str(cfg), "--output", str(tmp_path / "o")]) == EXIT_VALIDATION


class TestDispatch:
    def test_constants_manifest(self, tmp_path, constants):
        m = dispatch(RunConfig("constants", output=str(tmp_path)))
        assert m.status == "complete"
        assert outputs(tmp_path) == ["constants.json"]
        data = json.loads((tmp_path / "constants.json").read_text())
        assert data["c0"] == constants.c0 and data["beta0"] == constants.beta0
        assert m.digests() == {"constants.json": digest(tmp_path / "constants.json")}
        assert m.constants["rho0"] == constants.rho0
        assert m.config["tolerances"]["pohozaev_rel"] == 1e-6

    def test_landscape_schema(self, tmp_path):
        dispatch(RunConfig("landscape", output=str(tmp_path), options={"count": 5}))
        rows = list(csv.reader((tmp_path / "landscape.csv").read_text().splitlines()))
        assert rows[0] == ["c", "rho_c", "max_g", "f_at_rho0"] and len(rows) == 6

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"q": 2.4, "seed": 5, "options": {"count": 3}}))
        out = tmp_path / "o"
        assert main(["landscape", "--config", str(cfg), "--q", "2.5", "--output", str(out)]) == EXIT_OK
        m = manifest_of(out)
        assert m.config["q"] == 2.5 and m.config["seed"] == 5
        assert len((out / "landscape.csv").read_text().splitlines()) == 4

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "env"))
        assert main(["constants"]) == EXIT_OK
        assert (tmp_path / "env" / "manifest.json").exists()

    def test_identical_runs_identical_digests(self, tmp_path):
        for sub in ("a", "b"):
            assert main(["ground-state", "--c-frac", "0.3", "--output", str(tmp_path / sub)]) == EXIT_OK
            assert main(["landscape", "--count", "4", "--output", str(tmp_path / sub / "l")]) == EXIT_OK
        assert manifest_of(tmp_path / "a").digests() == manifest_of(tmp_path / "b").digests()
        assert manifest_of(tmp_path / "a" / "l").digests() == manifest_of(tmp_path / "b" / "l").digests()

    def test_manifest_covers_every_file(self, tmp_path):
        assert main(["ground-state", "--c-frac", "0.3", "--output", str(tmp_path)]) == EXIT_OK
        assert sorted(manifest_of(tmp_path).digests()) == outputs(tmp_path)
        for name, sha in manifest_of(tmp_path).digests().items():
            assert digest(tmp_path / name) == sha

    def test_numerical_failure_marks_partial(self, tmp_path):
        assert main(["ground-state", "--max-iter", "3", "--output", str(tmp_path)]) == EXIT_NUMERICAL
        m = manifest_of(tmp_path)
        assert m.status == "partial" and "converge" in m.error
        assert sorted(m.digests()) == outputs(tmp_path)

    def test_io_failure(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        assert main(["constants", "--output", str(blocker / "out")]) == EXIT_IO


class TestFieldCommands:
    @pytest.fixture
    def radial_snap(self, tmp_path, radial_half):
        return write_snapshot(tmp_path / "gs.snap", radial_half.field)[0]

    def test_evolve_needs_box(self, tmp_path, radial_snap, capsys):
        assert main(["evolve", "--datum", str(radial_snap), "--output", str(tmp_path / "o")]) == EXIT_VALIDATION
        assert "--box-n" in capsys.readouterr().err

    def test_evolve_from_radial_with_box(self, tmp_path, radial_snap):
        out = tmp_path / "o"
        code = main(["evolve", "--datum", str(radial_snap), "--box-n", "32", "--box-L", "60",
                     "--T", "0.04", "--dt", "0.01", "--stride", "2", "--snapshot-every", "1",
                     "--output", str(out)])
        assert code == EXIT_OK
        rows = (out / "trace.csv").read_text().splitlines()
        assert rows[0] == "t,mass,energy,grad,dist" and len(rows) == 4
        assert sorted(manifest_of(out).digests()) == outputs(out)
        snap, _ = read_snapshot(out / "field_000002.snap")
        assert snap.grid == BoxGrid(3, 32, 60.0)

    def test_evolve_blowup_is_reported(self, tmp_path, radial_snap):
        out = tmp_path / "o"
        code = main(["evolve", "--datum", str(radial_snap), "--box-n", "32", "--box-L", "60",
                     "--T", "0.04", "--dt", "0.01", "--ceiling", "1e-6", "--output", str(out)])
        assert code == EXIT_NUMERICAL
        m = manifest_of(out)
        assert m.status == "partial" and "blow-up" in m.error
        assert (out / "trace.csv").read_text() == "t,mass,energy,grad,dist\n"

    def test_strichartz(self, tmp_path, radial_snap):
        out = tmp_path / "o"
        assert main(["strichartz", "--datum", str(radial_snap), "--box-n", "32", "--box-L", "60",
                     "--T", "0.05", "--time-nodes", "9", "--output", str(out)]) == EXIT_OK
        rep = json.loads((out / "strichartz.json").read_text())
        assert rep["pair_q"] == ["20", "15/7"] and rep["pair_crit"] == ["6", "18/7"]
        assert rep["X_T"] == pytest.approx(rep["X_q"] + rep["X_crit"], rel=1e-15)

    def test_stability(self, tmp_path, box_half):
        snap = write_snapshot(tmp_path / "gs.snap", box_half.field)[0]
        out = tmp_path / "o"
        code = main(["stability", "--gs", str(snap), "--deltas", "1e-2", "--trials", "1",
                     "--T-sim", "0.2", "--dt", "0.02", "--window", "0.1", "--control", "--output", str(out)])
        assert code == EXIT_OK
        rows = list(csv.DictReader((out / "stability.csv").read_text().splitlines()))
        assert [float(r["delta"]) for r in rows] == [0.0, 0.01]
        assert all(r["blowup"] == "0" and r["windows_completed"] == "2" for r in rows)
        summary = json.loads((out / "stability.json").read_text())
        assert summary["blowups"] == 0 and "single computed minimiser" in summary["caveat"]

    def test_stability_rejects_bad_deltas(self, tmp_path, box_half):
        snap = write_snapshot(tmp_path / "gs.snap", box_half.field)[0]
        assert main(["stability", "--gs", str(snap), "--deltas", "1e-3,1e-2",
                     "--output", str(tmp_path / "o")]) == EXIT_VALIDATION
