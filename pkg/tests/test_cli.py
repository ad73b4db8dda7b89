import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbubble.analytic import sphere_map
from hbubble.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    VERIFY_CHECKS,
    RunConfig,
    export_artifacts,
    main,
    mesh_tolerance,
    run_config,
    verify_suite,
)
from hbubble.errors import ConfigError
from hbubble.mesh import build_icosphere
from hbubble.optimize import TRAJECTORY_COLUMNS

RADIAL = '{"kind": "radial", "a": 0.4}'


def _files(d):
    return sorted(p.name for p in d.iterdir())


class TestRunConfig:
    @settings(max_examples=50)
    @given(
        st.sampled_from(["verify", "minimize", "minimax", "sphere-scan", "export", "field-check"]),
        st.floats(1e-3, 1e3),
        st.integers(0, 6),
        st.integers(0, 2**64 - 1),
        st.floats(1e-8, 1e-1),
    )
    def test_round_trip(self, command, t, level, seed, tol):
        cfg = RunConfig(command=command, t=t, level=level, seed=seed, tol=tol).validate()
        back = RunConfig.from_json(cfg.to_json())
        assert back == cfg
        assert back.digest() == cfg.digest()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            RunConfig.from_dict({"command": "verify", "colour": "red"})

    @pytest.mark.parametrize(
        "key,value",
        [("t", 0.0), ("t", -2.0), ("level", 12), ("seed", -1), ("seed", 2**64), ("command", "plot"), ("p0", [2, 0, 0])],
    )
    def test_validation_names_field(self, key, value):
        with pytest.raises(ConfigError, match=key):
            RunConfig(**{key: value}).validate()

    def test_bad_field(self):
        with pytest.raises(ConfigError):
            RunConfig(field={"kind": "radial"}).validate()

    def test_digest_ignores_output(self):
        assert RunConfig(output="a").digest() == RunConfig(output="b").digest()
        assert RunConfig(seed=1).digest() != RunConfig(seed=2).digest()


class TestVerifySuite:
    def test_level5_all_pass(self):
        rows = verify_suite(5)
        assert rows and all(r["passed"] for r in rows), [r for r in rows if not r["passed"]]
        assert mesh_tolerance(5) == 1e-3

    def test_level2_volume_is_too_coarse(self):
        # the inscribed polyhedron loses 3.4 % of the volume at level 2
        rows = {r["identity"]: r for r in verify_suite(2)}
        assert not rows["sphere_volume"]["passed"]
        assert rows["sphere_volume"]["error"] == pytest.approx(3.38e-2, rel=1e-2)
        assert rows["sphere_dirichlet"]["passed"] and rows["sphere_area"]["passed"]

    def test_empty_selection(self):
        assert verify_suite(3, []) == []

    def test_selection(self):
        rows = verify_suite(2, ["newtonian"])
        assert {r["identity"] for r in rows} == {"newtonian_origin", "newtonian_unit_sphere", "newtonian_quadrature"}
        with pytest.raises(ConfigError):
            verify_suite(2, ["nonsense"])
        assert "sphere" in VERIFY_CHECKS


class TestArtifacts:
    def test_obj_vertex_count(self, tmp_path):
        level = 2
        u = sphere_map(build_icosphere(level), np.zeros(3), 1.0)
        (path,) = export_artifacts({"maps": {"sphere": u}}, tmp_path, "stem")
        lines = path.read_text().splitlines()
        assert sum(l.startswith("v ") for l in lines) == 10 * 4**level + 2
        assert sum(l.startswith("f ") for l in lines) == 20 * 4**level

    def test_trajectory_header_and_reexport(self, tmp_path):
        rows = [dict(zip(TRAJECTORY_COLUMNS, [0] + [0.1 * k for k in range(9)]))]
        result = {"tables": {"trajectory": (rows, TRAJECTORY_COLUMNS)}, "reports": {"r": {"x": np.float64(1.5)}}}
        paths = export_artifacts(result, tmp_path / "a", "s")
        again = export_artifacts(result, tmp_path / "b", "s")
        assert paths[0].read_text().splitlines()[0] == "iter,D,A,V,Q,E,residual,lambda,bary_norm,mean_norm"
        for p, q in zip(paths, again):
            assert p.read_bytes() == q.read_bytes()

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            export_artifacts({"reports": {"r": {}}}, blocker / "sub", "s")


class TestRunner:
    def test_minimal_verify(self, tmp_path):
        out = tmp_path / "v"
        assert run_config(RunConfig(output=str(out))) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest) >= {"config", "versions", "wall_time_s", "workers", "files"}
        listed = set(manifest["files"])
        assert listed == set(_files(out)) - {"manifest.json"}
        assert manifest["config"]["command"] == "verify"

    def test_invalid_t(self, tmp_path, capsys):
        assert run_config(RunConfig(t=-1.0, output=str(tmp_path))) == EXIT_CONFIG
        assert "t:" in capsys.readouterr().err

    def test_failing_verify_exit(self, tmp_path, capsys):
        assert run_config(RunConfig(level=2, output=str(tmp_path))) == EXIT_NUMERIC
        assert "sphere_volume" in capsys.readouterr().err

    def test_empty_selection_exit_zero(self, tmp_path):
        assert run_config(RunConfig(select=[], output=str(tmp_path))) == EXIT_OK
        (csv,) = [p for p in tmp_path.iterdir() if p.suffix == ".csv"]
        assert csv.read_text() == "identity,measured,expected,error,tolerance,passed\n"

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run_config(RunConfig(output=str(blocker / "x"))) == EXIT_IO

    def test_minimize_deterministic(self, tmp_path):
        cfg = dict(command="minimize", level=2, max_iters=40, seed=3, noise=1e-2)
        assert run_config(RunConfig(output=str(tmp_path / "a"), **cfg)) == EXIT_OK
        assert run_config(RunConfig(output=str(tmp_path / "b"), **cfg)) == EXIT_OK
        names = [n for n in _files(tmp_path / "a") if n != "manifest.json"]
        assert names == [n for n in _files(tmp_path / "b") if n != "manifest.json"]
        assert {n.rsplit(".", 1)[1] for n in names} == {"csv", "json", "obj"}
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        other = RunConfig(output=str(tmp_path / "c"), **{**cfg, "seed": 4})
        assert run_config(other) == EXIT_OK
        csv_a = next((tmp_path / "a").glob("*trajectory.csv")).read_bytes()
        csv_c = next((tmp_path / "c").glob("*trajectory.csv")).read_bytes()
        assert csv_a != csv_c


class TestMain:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"command": "export", "level": 4, "t": 2.0}))
        out = tmp_path / "o"
        assert main(["export", "--config", str(cfg), "--level", "1", "-o", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["level"] == 1 and manifest["config"]["t"] == 2.0
        (obj,) = out.glob("*.obj")
        assert sum(l.startswith("v ") for l in obj.read_text().splitlines()) == 42

    def test_field_check_and_scan(self, tmp_path):
        assert main(["field-check", "--field", RADIAL, "-o", str(tmp_path / "f")]) == EXIT_OK
        (rep,) = (tmp_path / "f").glob("field-check-*.json")
        data = json.loads(rep.read_text())
        assert data["conditions"]["k2_status"] == "inconclusive"
        assert data["brackets"]["ordered"]
        args = ["sphere-scan", "--field", RADIAL, "--level", "2", "--scan-radii", "2", "10", "-o", str(tmp_path / "s")]
        assert main(args) == EXIT_OK
        (csv,) = (tmp_path / "s").glob("*.csv")
        lines = csv.read_text().splitlines()
        assert lines[0] == "p_norm,E,bary_norm,bound" and len(lines) == 3

    def test_minimax_small(self, tmp_path):
        args = ["minimax", "--field", RADIAL, "--R", "20", "--ball-res", "2", "--level", "1", "--sweeps", "2"]
        assert main(args + ["-o", str(tmp_path)]) == EXIT_OK
        (summary,) = tmp_path.glob("*_family.json")
        data = json.loads(summary.read_text())
        assert data["degree"] == 1 and "brackets" in data
        (hist,) = tmp_path.glob("*_c_history.csv")
        assert hist.read_text().splitlines()[0] == "sweep,c_running"

    def test_bad_field_json(self, tmp_path, capsys):
        assert main(["verify", "--field", "{not json", "-o", str(tmp_path)]) == EXIT_CONFIG
        assert "field" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mesh": 3}))
        assert main(["verify", "--config", str(cfg), "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["verify", "--config", str(tmp_path / "none.json")]) == EXIT_IO

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "hbubble", "verify", "--select", "newtonian", "-o", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
