import subprocess
import sys

import numpy as np
import pytest

from microgen.cli import main
from microgen.config import SCHEMA, ConfigError, build_device, parse_config
from microgen.fitting import DEFAULT_K_CUB, MeasuredCurve, model_curve
from microgen.device import Excitation


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv_header(path):
    return path.read_text().splitlines()[0].split(",")


def test_defaults():
    cfg = parse_config("")
    for key, (_, default, _) in SCHEMA.items():
        assert cfg[key] == default
    assert not cfg.is_set("y0_m")


def test_comments_and_values():
    cfg = parse_config("# drive\ny0_m = 2e-6  # metres\nscale_list_ratio = 0.5, 1, 2\n")
    assert cfg["y0_m"] == 2e-6 and cfg.is_set("y0_m")
    assert cfg["scale_list_ratio"] == [0.5, 1.0, 2.0]


def test_every_error_reported_with_line():
    text = "mass = 1\nfoo_hz = 3\ny0_m = 1e-6\ny0_m = 2e-6\nf_hz = nan\nbranch_mode = sideways\nr_load_ohm = abc\nnonsense\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = info.value.errors
    assert len(errs) == 7
    assert "line 1" in errs[0] and "'mass'" in errs[0] and "unit suffix" in errs[0]
    assert "unknown key 'foo_hz'" in errs[1]
    assert "duplicate" in errs[2] and "line 4" in errs[2]
    assert "finite" in errs[3]
    assert "sideways" in errs[4]
    assert "r_load_ohm" in errs[5]
    assert "line 8" in errs[6]


def test_build_device_overrides(proto_device):
    dev = build_device(parse_config("zeta_p_ratio = 0.02\nr_load_ohm = 500\n"))
    assert dev.resonator.zeta_p == 0.02
    assert dev.r_load == 500.0
    assert dev.coupling_k == proto_device.coupling_k
    assert dev.resonator.k_cub == DEFAULT_K_CUB


def test_build_device_raw_preset():
    dev = build_device(parse_config("device_preset_mode = raw\nnatural_freq_hz = 300\n"))
    assert dev.resonator.k_cub == 0.0
    assert dev.r_coil == pytest.approx(97.728, rel=1e-3)


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_config_error_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "mass = 3\n")
    assert main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "mass" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["sweep", str(tmp_path / "absent.cfg")]) == 2


def test_degenerate_sweep_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, "sweep_f_start_hz = 340\nsweep_f_end_hz = 340\n")
    assert main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "f_start" in capsys.readouterr().err


SWEEP_CFG = "y0_m = 5.1e-6\nsweep_f_start_hz = 330\nsweep_f_end_hz = 350\nsweep_rate_hzps = 2\n"


def test_sweep_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, SWEEP_CFG)
    for run in ("a", "b"):
        assert main(["sweep", str(cfg), "--out", str(tmp_path / run)]) == 0
    for name in ("sweep_up.csv", "sweep_down.csv", "sweep_summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_csv_header(tmp_path / "a" / "sweep_up.csv") == ["f_hz", "z_amp_m", "v_rms_v"]
    assert "width_hz" in (tmp_path / "a" / "sweep_summary.txt").read_text()


def test_freq_response_and_backbone(tmp_path):
    cfg = write(tmp_path, "backbone_mode = on\nfr_points_count = 101\n")
    assert main(["freq-response", str(cfg), "--out", str(tmp_path)]) == 0
    header = read_csv_header(tmp_path / "freq_response.csv")
    assert header[:4] == ["f_hz", "z_root1_m", "z_root2_m", "z_root3_m"]
    assert read_csv_header(tmp_path / "backbone.csv") == ["z_amp_m", "f_hz"]
    assert "f_jump_up_hz" in (tmp_path / "freq_response_summary.txt").read_text()


def test_coil_table(tmp_path):
    cfg = write(tmp_path, "gap_points_count = 2\ngap_min_m = 0.5e-3\ngap_max_m = 1e-3\n")
    assert main(["coil", str(cfg), "--out", str(tmp_path)]) == 0
    data = np.loadtxt(tmp_path / "coil.csv", delimiter=",", skiprows=1)
    assert read_csv_header(tmp_path / "coil.csv") == ["z_gap_m", "flux_wb", "k_vspm", "r_coil_ohm"]
    assert data.shape == (2, 4) and data[0, 1] > data[1, 1] > 0


def test_optimal_load_command(tmp_path):
    cfg = write(tmp_path, "r_points_count = 13\n")
    assert main(["optimal-load", str(cfg), "--out", str(tmp_path)]) == 0
    summary = (tmp_path / "optimal_load_summary.txt").read_text()
    assert "r_opt_ohm" in summary and "p_max_w" in summary


def test_project_thickness_command(tmp_path):
    cfg = write(tmp_path, "thickness_list_m = 20e-6, 40e-6\n")
    assert main(["project-thickness", str(cfg), "--out", str(tmp_path)]) == 0
    data = np.loadtxt(tmp_path / "thickness.csv", delimiter=",", skiprows=1)
    assert data[1, 3] > data[0, 3]


def test_project_thickness_out_of_range_exits_1(tmp_path):
    cfg = write(tmp_path, "thickness_list_m = 1e-3\n")
    assert main(["project-thickness", str(cfg), "--out", str(tmp_path)]) == 1


def test_scaling_needs_five_points(tmp_path):
    cfg = write(tmp_path, "scale_list_ratio = 0.5, 1, 2\n")
    assert main(["scaling", str(cfg), "--out", str(tmp_path)]) == 1


def _fit_files(tmp_path, proto_device, unit):
    dev = proto_device.with_resonator(zeta_p=0.008)
    exc = Excitation(5.1e-6, 344.0)
    r = np.logspace(0, 6, 12)
    y = model_curve(MeasuredCurve("power_vs_load", r, np.ones(12), exc, track_resonance=True), dev)
    scale, col = (1e6, "p_load_uw") if unit == "uw" else (1.0, "p_load_w")
    lines = [f"r_load_ohm,{col}"] + [f"{float(a)!r},{float(b) * scale!r}" for a, b in zip(r, y)]
    csv_path = write(tmp_path, "\n".join(lines) + "\n", f"data_{unit}.csv")
    return write(tmp_path, f"fit_csv_path = {csv_path}\nfit_free_mode = zeta_p\n", f"fit_{unit}.cfg")


def test_fit_command_unit_invariant(tmp_path, proto_device):
    outs = {}
    for unit in ("w", "uw"):
        cfg = _fit_files(tmp_path, proto_device, unit)
        assert main(["fit", str(cfg), "--out", str(tmp_path / unit)]) == 0
        text = (tmp_path / unit / "fit_report.txt").read_text()
        outs[unit] = dict(line.split(" = ", 1) for line in text.splitlines())
    for rep in outs.values():
        assert rep["converged"] == "1"
        assert float(rep["sum_sq_rel_residual"]) < 1e-20
    # Same data in different power units: identical fit up to the rounding of the conversion.
    assert float(outs["w"]["zeta_p [1]"]) == pytest.approx(float(outs["uw"]["zeta_p [1]"]), rel=1e-9)
    assert outs["w"]["iterations"] == outs["uw"]["iterations"]
    assert read_csv_header(tmp_path / "w" / "fit_residuals.csv")[0] == "r_load_ohm"


def test_fit_bad_header_exits_2(tmp_path):
    data = write(tmp_path, "load,power\n1,2\n", "bad.csv")
    cfg = write(tmp_path, f"fit_csv_path = {data}\n")
    assert main(["fit", str(cfg), "--out", str(tmp_path)]) == 2


def test_module_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "microgen", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


@pytest.fixture(scope="module")
def reproduction(tmp_path_factory):
    out = tmp_path_factory.mktemp("reproduce")
    assert main(["reproduce-paper", "--out", str(out)]) == 0
    return out


def test_reproduce_command_summary(reproduction):
    summary = dict(
        line.split(" = ", 1) for line in (reproduction / "summary.txt").read_text().splitlines()
    )
    for key in ("p_max_w", "v_max_rms_v", "npd_wpcm3pg2", "raw_power_density_wpcm3", "hysteresis_width_hz"):
        assert key in summary
    assert float(summary["hysteresis_width_hz"]) > 0
    for name in ("hysteresis_sweep_up.csv", "hysteresis_sweep_down.csv", "drive_sweeps.csv", "drive_peaks.csv", "load_scan.csv"):
        header = read_csv_header(reproduction / name)
        assert all("_" in h for h in header)
