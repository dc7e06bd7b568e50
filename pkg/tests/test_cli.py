import inspect
import json

import numpy as np
import pytest
import yaml

from squeezing_ime import cli, dynamics, ime, mesh, spectra
from squeezing_ime.config import BUNDLED, SCHEMA, ScenarioConfig, load_config, parse_config
from squeezing_ime.errors import ValidationError

MINIMAL = """
name: tiny
analysis: spectrum
system:
  gamma: [1.0]
  G: [[1, 1, 2.0, 0.0]]
  F: [[1, 1, 0.0, 1.0]]
grid: {max: 3.0, points: 61}
"""


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


class TestConfig:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_round_trip_idempotent(self, name):
        cfg = load_config(name)
        text = cfg.to_yaml()
        again = parse_config(text)
        assert again.to_yaml() == text
        assert again == cfg

    def test_bundled_systems(self):
        four = load_config("four_mode").build_system()
        assert four.n_modes == 4
        np.testing.assert_allclose(four.gamma, [1, 1.5, 1, 1.5])
        assert four.G[0, 2] == 0.55 and four.F[0, 3] == 0.6

    def test_defaults_filled(self):
        cfg = parse_config(MINIMAL)
        assert cfg.sections["optimize"]["band"] == list(ime.DEFAULT_BAND)
        assert cfg.sections["decompose"]["ordering"] == mesh.DEFAULT_ORDERING

    def test_unknown_keys(self):
        with pytest.raises(ValidationError, match="unknown key 'grid.step'"):
            parse_config(MINIMAL.replace("points: 61}", "points: 61, step: 2}"))
        with pytest.raises(ValidationError, match="unknown key 'plots'"):
            parse_config(MINIMAL + "plots: true\n")

    def test_type_errors_name_field(self):
        with pytest.raises(ValidationError, match="grid.points"):
            parse_config(MINIMAL.replace("points: 61", "points: 6.5"))
        with pytest.raises(ValidationError, match=r"system.G\[0\].re"):
            parse_config(MINIMAL.replace("2.0, 0.0]]", "x, 0.0]]"))

    def test_parse_error_reports_line(self):
        with pytest.raises(ValidationError, match="line"):
            parse_config("system: [\n  gamma: 1\n")

    def test_even_grid_rejected(self):
        with pytest.raises(ValidationError, match="odd"):
            parse_config(MINIMAL.replace("points: 61", "points: 60"))

    def test_non_hermitian_names_entry(self):
        text = MINIMAL.replace("gamma: [1.0]", "gamma: [1.0, 1.0]").replace(
            "G: [[1, 1, 2.0, 0.0]]", "G: [[1, 2, 0.5, 0.0]]").replace("F: [[1, 1, 0.0, 1.0]]", "F: []")
        with pytest.raises(ValidationError, match=r"G\[1,2\]"):
            parse_config(text)

    def test_out_of_range_entry(self):
        with pytest.raises(ValidationError, match="out of range"):
            parse_config(MINIMAL.replace("[[1, 1, 2.0, 0.0]]", "[[1, 2, 2.0, 0.0]]"))

    def test_overrides(self):
        cfg = parse_config(MINIMAL).replace(grid_points=21, grid_max=2.0, seed=5, analysis="abmd")
        assert cfg.sections["grid"] == {"max": 2.0, "points": 21}
        assert cfg.sections["optimize"]["seed"] == 5 and cfg.analysis == "abmd"

    def test_module_defaults_single_source(self):
        sig = inspect.signature(ime.optimize_ime).parameters
        opt = {k: v[0] for k, v in SCHEMA["optimize"].items()}
        assert tuple(opt["band"]) == sig["band"].default
        assert opt["n_starts"] == sig["n_starts"].default
        assert opt["n_points"] == sig["n_points"].default
        assert opt["tol_db"] == sig["tol_db"].default
        assert opt["objective"] == sig["objective"].default
        assert SCHEMA["grid"]["points"][0] == dynamics.DEFAULT_GRID_POINTS
        assert SCHEMA["grid"]["max"][0] == dynamics.DEFAULT_GRID_MAX
        assert SCHEMA["hd_sweep"]["resolution_deg"][0] == spectra.DEFAULT_SWEEP_RESOLUTION_DEG
        dec = inspect.signature(mesh.realize_phases).parameters
        assert SCHEMA["decompose"]["n_cavities"][0] == dec["n_cavities"].default
        assert SCHEMA["decompose"]["phase_tolerance"][0] == dec["tolerance"].default
        assert SCHEMA["decompose"]["ordering"][0] == inspect.signature(mesh.two_mode_decompose).parameters[
            "ordering"].default

    def test_from_dict_rejects_non_mapping(self):
        with pytest.raises(ValidationError):
            ScenarioConfig.from_dict([1, 2])


class TestCli:
    def test_spectrum_csv(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        assert run(tmp_path / "o", "spectrum", "--config", str(cfg)) == 0
        lines = (tmp_path / "o" / "spectrum.csv").read_text().splitlines()
        assert lines[0] == "omega,linear,db"
        assert len(lines) == 62

    def test_abmd_files(self, tmp_path, capsys):
        assert run(tmp_path, "abmd", "--config", "single_mode_opo", "--grid-points", "101") == 0
        for name in ("abmd_d.csv", "supermodes.csv", "supermode_1.csv", "supermode_2.csv"):
            assert (tmp_path / name).exists()
        assert (tmp_path / "abmd_d.csv").read_text().splitlines()[0] == "omega,d1,d2"
        assert (tmp_path / "supermode_1.csv").read_text().splitlines()[0] == \
            "omega,re(u_1),re(u_2),im(u_1),im(u_2)"
        out = json.loads(capsys.readouterr().out)
        assert out["summary"]["n_squeezed"] == 1

    def test_optimize_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run(tmp_path / sub, "optimize-ime", "--config", "single_mode_opo", "--seed", "7",
                       "--grid-points", "201") == 0
        a = (tmp_path / "a" / "match_report.txt").read_bytes()
        assert a == (tmp_path / "b" / "match_report.txt").read_bytes()
        rep = json.loads(a)
        assert rep["seed"] == 7 and rep["band_fraction"] == 1.0
        assert rep["topology"]["n_params"] == len(rep["params"])

    def test_optimize_requires_seed(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        assert run(tmp_path / "o", "optimize-ime", "--config", str(cfg)) == 2
        err = json.loads(capsys.readouterr().err)
        assert "optimize.seed" in err["message"] and err["exit_code"] == 2

    def test_validation_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("system:\n  gamma: [1, 1]\n  G: [[1, 2, 0.5, 0.0]]\n")
        assert run(tmp_path / "o", "spectrum", "--config", str(cfg)) == 2
        record = json.loads(capsys.readouterr().err)
        assert record["type"] == "ValidationError" and "G[1,2]" in record["message"]
        assert json.loads((tmp_path / "o" / "error.json").read_text()) == record

    def test_unstable_system_exit_code(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL.replace("0.0, 1.0]]", "0.0, 3.0]]"))
        assert run(tmp_path / "o", "spectrum", "--config", str(cfg)) == 2

    def test_io_exit_code(self, tmp_path):
        assert run(tmp_path, "spectrum", "--config", str(tmp_path / "missing.yaml")) == 4
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["spectrum", "--config", "single_mode_opo", "--out", str(blocker / "sub"),
                         "--grid-points", "21"]) == 4

    def test_decompose_and_verify(self, tmp_path):
        assert run(tmp_path, "decompose", "--config", "two_mode_opo", "--grid-points", "201") == 0
        doc = json.loads((tmp_path / "netlist.txt").read_text())
        assert doc["ordering"] == "rectangular" and len(doc["factors"]) == 1
        assert doc["verification"]["max_error"] < 1e-10
        assert run(tmp_path, "verify", "--config", "two_mode_opo", "--grid-points", "201") == 0
        assert json.loads((tmp_path / "verify_report.txt").read_text())["max_error"] < 1e-10

    def test_verify_detects_wrong_chain(self, tmp_path):
        assert run(tmp_path, "decompose", "--config", "two_mode_opo", "--grid-points", "101") == 0
        cfg = load_config("two_mode_opo").to_dict()
        cfg["ime"]["stages"][0]["detunings"] = [0.0, 0.0]
        path = tmp_path / "other.yaml"
        path.write_text(yaml.safe_dump(cfg))
        assert run(tmp_path, "verify", "--config", str(path), "--grid-points", "101") == 3

    def test_hd_sweep(self, tmp_path):
        assert run(tmp_path, "hd-sweep", "--config", "single_mode_opo", "--grid-points", "101") == 0
        header = (tmp_path / "hd_sweep.csv").read_text().splitlines()[0]
        assert header == "omega,envelope_linear,envelope_db,real_lo_bound_db,supermode_db,excess_db"
