import csv
import hashlib
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from ffq import cli
from ffq.two_qubit import DEFAULT_VDD


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


# --- configuration ------------------------------------------------------------------

class TestConfig:
    def test_defaults_fill_every_field(self):
        cfg = cli.resolve_config("spectrum")
        assert cfg["vt_ueV"] == 47.15
        assert cfg["b_field"] == 0.796

    def test_relax_map_uses_its_own_tunnel_coupling(self):
        assert cli.resolve_config("relax-map")["vt_ueV"] == 47.2

    def test_unknown_field_named(self):
        with pytest.raises(cli.ConfigError, match="'bogus'"):
            cli.resolve_config("spectrum", {"bogus": 1})

    def test_wrong_type_named(self):
        with pytest.raises(cli.ConfigError, match="'n_e'.*number"):
            cli.resolve_config("spectrum", {"n_e": "many"})

    def test_decreasing_axis_rejected(self):
        with pytest.raises(cli.ConfigError, match="e_min"):
            cli.resolve_config("spectrum", {"e_min": 5.0, "e_max": 1.0})

    def test_cutoff_order(self):
        with pytest.raises(cli.ConfigError, match="f_low_hz"):
            cli.resolve_config("spectrum", overrides={"f_low_hz": 1e13})

    def test_json_syntax_error_reports_position(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "n_e": 3,\n  "b_field" 0.8\n}\n')
        code, _ = run(tmp_path, "spectrum", "--config", str(bad))
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_config_file_and_flag_precedence(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"n_e": 3, "f_low_hz": 10.0}))
        code, out = run(tmp_path, "spectrum", "--config", str(conf), "--omega-l", "100")
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["n_e"] == 3
        assert manifest["config"]["f_low_hz"] == 100.0
        assert manifest["cutoffs_rad_s"]["omega_l"] == pytest.approx(2 * math.pi * 100)

    def test_negative_seed_rejected(self, tmp_path):
        code, _ = run(tmp_path, "calibrate-vdd", "--seed", "-1")
        assert code == 2

    def test_unknown_point_label(self, tmp_path, capsys):
        code, _ = run(tmp_path, "evolve", "--set", 'point="z"', "--set", "n_times=5")
        assert code == 2
        assert "point" in capsys.readouterr().err


class TestThreads:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("FFQ_THREADS", "3")
        assert cli.thread_count(2) == 2

    def test_environment_fallback(self, monkeypatch):
        monkeypatch.setenv("FFQ_THREADS", "3")
        assert cli.thread_count() == 3

    def test_cpu_default(self, monkeypatch):
        monkeypatch.delenv("FFQ_THREADS", raising=False)
        assert cli.thread_count() >= 1

    def test_zero_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.thread_count(0)

    def test_run_cells_preserves_order(self):
        items = list(range(7))
        assert cli.run_cells(abs, items, 2) == items


class TestFormatting:
    @pytest.mark.parametrize("value,text", [
        (1.234e-5, "1.234000000e-5"),
        (0.0, "0.000000000e0"),
        (-2.5e12, "-2.500000000e12"),
        (math.inf, "inf"),
    ])
    def test_fmt(self, value, text):
        assert cli.fmt(value) == text


# --- commands ------------------------------------------------------------------

class TestSpectrumCommand:
    def test_flat_point_near_calibrated_field(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--set", "e_min=2.0", "--set", "e_max=4.5", "--set", "n_e=51")
        assert code == 0
        rows = read_csv(out / "spectrum.csv")
        e = np.array([float(r["e_field_vcm"]) for r in rows])
        w = np.array([float(r["omega10_mhz"]) for r in rows])
        slope = np.abs(np.gradient(w, e))
        assert e[np.argmin(slope)] == pytest.approx(3.13, abs=0.15)

    def test_no_hyperfine_monotone_g_factor_term(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--set", "hyperfine_mhz=0", "--set", "n_e=21")
        assert code == 0
        w = np.array([float(r["omega10_mhz"]) for r in read_csv(out / "spectrum.csv")])
        d = np.diff(w)
        assert np.all(d < 0) or np.all(d > 0)

    def test_dominant_z_coefficient_is_charge_like(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--set", "n_e=5")
        row = read_csv(out / "spectrum.csv")[2]
        z = {k[5:]: float(v) for k, v in row.items() if k.startswith("abs_z")}
        assert max(z, key=z.get) == "10"


class TestDeterminism:
    def test_byte_identical_reruns(self, tmp_path):
        args = ("dephase-map", "--set", "n_e=7", "--set", "n_b=5", "--set", "n_cut=9", "--threads", "1")
        _, a = run(tmp_path, *args, name="a")
        _, b = run(tmp_path, *args, name="b")
        for name in ("dephase_map.csv", "dephase_cuts.csv", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_serial_and_parallel_identical(self, tmp_path):
        common = ("relax-map", "--set", "n_e=5", "--set", "n_b=4")
        _, a = run(tmp_path, *common, "--threads", "1", name="serial")
        _, b = run(tmp_path, *common, "--threads", "2", name="parallel")
        assert (a / "relax_map.csv").read_bytes() == (b / "relax_map.csv").read_bytes()

    def test_monte_carlo_seeded(self, tmp_path):
        args = ("evolve", "--set", 'propagator="montecarlo"', "--set", "n_traj=3",
                "--set", "n_times=4", "--set", "t_max=2e-9", "--seed", "5")
        _, a = run(tmp_path, *args, name="a")
        _, b = run(tmp_path, *args, name="b")
        assert (a / "evolve.csv").read_bytes() == (b / "evolve.csv").read_bytes()


class TestManifest:
    def test_contents(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
        code, out = run(tmp_path, "calibrate-vdd")
        assert code == 0
        m = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert m["timestamp"] == "1970-01-02T00:00:00Z"
        assert m["config"] == cli.resolve_config("calibrate-vdd")
        assert set(m["cutoffs_rad_s"]) == {"omega_l", "omega_h"}
        digest = hashlib.sha256((out / "calibration.json").read_bytes()).hexdigest()
        assert m["files"]["calibration.json"] == digest
        text = (out / "manifest.json").read_text()
        assert list(json.loads(text)) == sorted(json.loads(text))


class TestCalibrationCommand:
    def test_value_and_reuse(self, tmp_path):
        _, cal_dir = run(tmp_path, "calibrate-vdd", name="cal")
        cal = json.loads((cal_dir / "calibration.json").read_text())
        assert cal["v_dd_mhz"] * 2 * math.pi * 1e6 == pytest.approx(DEFAULT_VDD, rel=1e-3)
        assert cal["swap_time_c_ns"] == pytest.approx(250, rel=0.2)
        code, out = run(tmp_path, "evolve", "--set", f'calibration_file="{cal_dir / "calibration.json"}"',
                        "--set", "n_times=9", name="ev")
        assert code == 0
        m = json.loads((out / "manifest.json").read_text())
        assert m["config"]["v_dd_mhz"] == cal["v_dd_mhz"]
        assert m["swap_time_s"] == pytest.approx(150e-9, rel=1e-3)

    def test_doubling_target(self, tmp_path):
        _, a = run(tmp_path, "calibrate-vdd", name="a")
        _, b = run(tmp_path, "calibrate-vdd", "--set", "target_ns=300", name="b")
        va = json.loads((a / "calibration.json").read_text())["v_dd_mhz"]
        vb = json.loads((b / "calibration.json").read_text())["v_dd_mhz"]
        assert vb == pytest.approx(va / 2, rel=1e-3)

    def test_unbracketable(self, tmp_path, capsys):
        code, _ = run(tmp_path, "calibrate-vdd", "--set", "target_ns=1e-12")
        assert code == 2
        assert "bracket" in capsys.readouterr().err


class TestMapCommands:
    def test_dephase_map_sweet_spot_band(self, tmp_path):
        code, out = run(tmp_path, "dephase-map", "--set", "n_e=81", "--set", "n_b=3",
                        "--set", "b_min=0.8", "--set", "b_max=0.82", "--set", "n_cut=5")
        assert code == 0
        _, vals = read_matrix(out / "dephase_map.csv")
        t2 = vals[:, 1:]
        assert np.all(t2 > 0)
        # sweet-spot peaks tower over the band edges even on a coarse grid
        assert np.all(t2.max(axis=1) > 10 * t2[:, [0, -1]].max(axis=1))

    def test_sentinel_written_as_inf(self, tmp_path):
        code, out = run(tmp_path, "dephase-map", "--set", "n_e=3", "--set", "n_b=2",
                        "--set", "omega_n_ueV=0", "--set", "n_cut=3")
        assert code == 0
        _, vals = read_matrix(out / "dephase_map.csv")
        assert np.all(np.isinf(vals[:, 1:]))
        assert "inf" in json.loads((out / "manifest.json").read_text())["sentinel"]

    def test_relax_map_points_and_band(self, tmp_path):
        code, out = run(tmp_path, "relax-map", "--set", "n_e=9", "--set", "n_b=3")
        assert code == 0
        m = json.loads((out / "manifest.json").read_text())
        assert set(m["points"]) == {"a", "b", "c"}
        header, vals = read_matrix(out / "relax_map.csv")
        e_axis = np.array([float(h) for h in header[1:]])
        col0 = np.argmin(np.abs(e_axis))
        t1 = vals[:, 1:]
        # near zero detuning T1 beats the far edge of the map
        assert np.all(t1[:, col0] >= t1[:, -1])


class TestEvolveCommand:
    def test_traces_and_dft(self, tmp_path):
        code, out = run(tmp_path, "evolve", "--set", 'point="c"', "--set", "n_times=401")
        assert code == 0
        rows = read_csv(out / "evolve.csv")
        assert len(rows) == 401
        p = np.array([[float(r["P01_clean"]), float(r["P10_clean"]), float(r["Pleak_clean"])] for r in rows])
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
        dft = read_csv(out / "evolve_dft.csv")
        assert len(dft) == 512 // 2 + 1
        m = json.loads((out / "manifest.json").read_text())
        assert m["dft"]["window"] == "hann"
        assert m["swap_time_s"] == pytest.approx(250e-9, rel=0.2)

    @pytest.mark.parametrize("prop", ["secular", "full"])
    def test_cumulant_propagators(self, tmp_path, prop):
        code, out = run(tmp_path, "evolve", "--set", f'propagator="{prop}"', "--set", "n_times=6")
        assert code == 0
        a = read_csv(out / "evolve.csv")
        assert float(a[0]["P01_noisy"]) == pytest.approx(0.75)


class TestFourLevelCommand:
    def load(self, tmp_path, *extra, name="fl"):
        code, out = run(tmp_path, "fourlevel", "--set", "n_delta=41", *extra, name=name)
        assert code == 0
        return read_csv(out / "fourlevel_modes.csv"), json.loads((out / "manifest.json").read_text())

    def test_dominant_mode_crossover(self, tmp_path):
        rows, _ = self.load(tmp_path)

        def dominant(row):
            return max("abcdef", key=lambda n: float(row[f"amp_{n}"]))

        assert dominant(rows[1]) == "c"
        assert dominant(rows[-1]) == "d"

    def test_equal_amplitudes_on_resonance(self, tmp_path):
        rows, _ = self.load(tmp_path)
        res = [r for r in rows if float(r["delta_over_gap"]) == 1.0][0]
        assert float(res["amp_c"]) == pytest.approx(float(res["amp_d"]), rel=1e-6)

    def test_charge_dephasing_breaks_f_line_symmetry(self, tmp_path):
        sym, _ = self.load(tmp_path, name="sym")
        asym, _ = self.load(tmp_path, "--set", "gamma2_mhz=2", name="asym")

        def f_rates(rows):
            return np.array([float(r["rate_f_mhz"]) for r in rows])

        s, a = f_rates(sym), f_rates(asym)
        # the sweep 0..4 has resonance at index 10
        assert np.allclose(np.abs(s[5:10]), np.abs(s[15:10:-1]), rtol=1e-9)
        assert not np.allclose(np.abs(a[5:10]), np.abs(a[15:10:-1]), rtol=1e-2)

    def test_case_reports(self, tmp_path):
        _, m = self.load(tmp_path)
        assert [m["case_reports"][k]["regime"] for k in ("0.1", "1", "10")] == [3, 2, 1]


def test_installed_executable(tmp_path):
    exe = shutil.which("ffq")
    if exe is None:
        pytest.skip("ffq not on PATH")
    res = subprocess.run([exe, "calibrate-vdd", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "manifest.json").exists()
