"""Command-line front end.

    microgen COMMAND [CONFIG] [--out DIR] [--seed N]

Exit status: 0 success, 1 model/domain error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dynamics as dyn
from . import electrical as el
from . import fitting as ft
from . import harmonic as hb
from .config import ConfigError, RunConfig, build_device, describe_keys, parse_config
from .device import DeviceParams, Excitation, ParameterError, natural_frequency
from .magnetics import ConvergenceError, build_layout, coil_resistance, flux_linkage, transduction_coefficient

log = logging.getLogger("microgen")

COMMANDS = ("coil", "freq-response", "sweep", "optimal-load", "fit", "scaling", "project-thickness", "reproduce-paper")

# Demonstration value for the saturation (amplitude-dependent damping) runs:
# doubles the parasitic damping at 450 um amplitude.
SATURATION_GAMMA_SAT = 5e6  # 1/m^2
DRIVE_LEVELS = (1e-6, 2e-6, 3e-6, 4e-6, 5e-6)
LOAD_SCAN_LEVELS = (1e-6, 2e-6, 3e-6, 4e-6, 5.1e-6)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10e}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_summary(path: Path, items: dict[str, object]) -> str:
    text = "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return text


def _excitation(cfg: RunConfig) -> Excitation:
    return Excitation(cfg["y0_m"], cfg["f_hz"])


def _op_kw(cfg: RunConfig) -> dict:
    return {"branch": cfg["branch_mode"], "track_resonance": cfg["track_resonance_mode"] == "on"}


def _default_band(device: DeviceParams, y0: float) -> tuple[float, float]:
    f_n = natural_frequency(device.resonator)
    f_peak = hb.peak_response(device, y0)[0] if y0 > 0 else f_n
    return math.floor(0.97 * f_n), math.ceil(1.03 * max(f_peak, f_n))


# -- commands -------------------------------------------------------------------


def cmd_coil(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    layout = build_layout(dev.coil)
    r = coil_resistance(layout, dev.coil.resistivity)
    gaps = np.linspace(cfg["gap_min_m"], cfg["gap_max_m"], cfg["gap_points_count"])
    rows = []
    for z in gaps:
        rows.append((z, flux_linkage(dev.magnet, layout, float(z)), transduction_coefficient(dev.magnet, layout, float(z)), r))
    write_csv(out / "coil.csv", ("z_gap_m", "flux_wb", "k_vspm", "r_coil_ohm"), rows)
    print(write_summary(out / "coil_summary.txt", {
        "n_turns": layout.n_turns,
        "innermost_side_m": layout.turns[-1].side_length,
        "track_length_m": layout.total_track_length,
        "r_coil_ohm": r,
    }), end="")


def cmd_freq_response(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    y0 = cfg["y0_m"]
    lo, hi = _default_band(dev, y0)
    lo = cfg["fr_f_min_hz"] or lo
    hi = cfg["fr_f_max_hz"] or hi
    if not lo < hi:
        raise ParameterError("frequency-response band is empty")
    fr = hb.frequency_response(dev, y0, np.linspace(lo, hi, cfg["fr_points_count"]))
    rows = []
    for i, f in enumerate(fr.f):
        rows.append((f, *[None if np.isnan(z) else z for z in fr.roots[i]],
                     *[int(s) if not np.isnan(z) else None for s, z in zip(fr.stable[i], fr.roots[i])]))
    write_csv(
        out / "freq_response.csv",
        ("f_hz", "z_root1_m", "z_root2_m", "z_root3_m", "stable1_flag", "stable2_flag", "stable3_flag"),
        rows,
    )
    if cfg["backbone_mode"] == "on":
        z = np.linspace(0.0, 1.2 * np.nanmax(fr.roots), 201)
        write_csv(out / "backbone.csv", ("z_amp_m", "f_hz"), zip(z, hb.backbone(dev, z)))
    jumps = hb.jump_frequencies(dev, y0)
    print(write_summary(out / "freq_response_summary.txt", {
        "f_jump_up_hz": jumps.f_jump_up,
        "f_jump_down_hz": jumps.f_jump_down,
        "diagnostic": jumps.diagnostic or "bistable band found",
    }), end="")


def _run_sweeps(dev: DeviceParams, cfg: RunConfig, y0: float) -> dict[str, dyn.SweepResult]:
    lo, hi = _default_band(dev, y0)
    f_start = cfg["sweep_f_start_hz"] if cfg["sweep_f_start_hz"] is not None else lo
    f_end = cfg["sweep_f_end_hz"] if cfg["sweep_f_end_hz"] is not None else hi
    if f_start == f_end:
        raise ParameterError(f"sweep range is empty: f_start = f_end = {f_start} Hz")
    a, b = min(f_start, f_end), max(f_start, f_end)
    wanted = ("up", "down") if cfg["sweep_direction_mode"] == "both" else (cfg["sweep_direction_mode"],)
    out = {}
    for d in wanted:
        spec = dyn.SweepSpec(
            f_start=a if d == "up" else b,
            f_end=b if d == "up" else a,
            rate=cfg["sweep_rate_hzps"],
            direction=d,
            excitation_y0=y0,
            bin_width=cfg["sweep_bin_hz"],
            steps_per_cycle=cfg["sweep_steps_per_cycle_count"],
        )
        out[d] = dyn.sweep(dev, spec)
    return out


def _sweep_rows(res: dyn.SweepResult):
    return zip(res.f, res.z_amp, res.v_out_rms)


SWEEP_HEADER = ("f_hz", "z_amp_m", "v_rms_v")


def cmd_sweep(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    sweeps = _run_sweeps(dev, cfg, cfg["y0_m"])
    for d, res in sweeps.items():
        write_csv(out / f"sweep_{d}.csv", SWEEP_HEADER, _sweep_rows(res))
    if len(sweeps) == 2:
        m = dyn.hysteresis_metrics(sweeps["up"], sweeps["down"])
        line = (
            f"hysteresis: f_peak_up_hz={m.f_peak_up:.3f} f_peak_down_hz={m.f_peak_down:.3f} "
            f"jump_down_hz={_fmt_opt(m.jump_down_f)} jump_up_hz={_fmt_opt(m.jump_up_f)} "
            f"width_hz={m.width_hz:.3f} v_peak_up_v={m.v_peak_up:.5f} v_peak_down_v={m.v_peak_down:.5f}"
        )
    else:
        (d, res), = sweeps.items()
        i = int(np.argmax(res.z_amp))
        line = f"sweep {d}: f_peak_hz={res.f[i]:.3f} v_peak_v={res.v_out_rms[i]:.5f}"
    (out / "sweep_summary.txt").write_text(line + "\n", encoding="utf-8")
    print(line)


def _fmt_opt(x: float | None) -> str:
    return "absent" if x is None else f"{x:.3f}"


def cmd_optimal_load(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    exc = _excitation(cfg)
    kw = _op_kw(cfg)
    rs = np.logspace(math.log10(cfg["r_min_ohm"]), math.log10(cfg["r_max_ohm"]), cfg["r_points_count"])
    rows = []
    for r in rs:
        op = el.operating_point(dev.with_load(float(r)), exc, **kw)
        rows.append((r, op.p_load, op.v_rms, op.z_amp, op.f))
    write_csv(out / "optimal_load.csv", ("r_load_ohm", "p_load_w", "v_rms_v", "z_amp_m", "f_hz"), rows)
    opt = el.optimal_load(dev, exc, (cfg["r_min_ohm"], cfg["r_max_ohm"]), **kw)
    print(write_summary(out / "optimal_load_summary.txt", {
        "r_coil_ohm": dev.r_coil,
        "r_opt_ohm": opt.r_opt,
        "p_max_w": opt.p_max,
        "v_rms_at_opt_v": opt.point.v_rms,
        "f_hz": opt.point.f,
        "unimodal_flag": opt.unimodal,
    }), end="")


def cmd_scaling(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    rep = el.scaling_study(dev, cfg["scale_list_ratio"], _excitation(cfg))
    write_csv(out / "scaling.csv", ("scale_ratio", "p_max_w", "npd_wpcm3pg2"), zip(rep.scales, rep.p_max, rep.npd))
    items = {f"assumption_{i}": a for i, a in enumerate(rep.assumptions, 1)}
    items.update({
        "exponent": rep.exponent,
        "r_squared": rep.r_squared,
        "residual": rep.residual,
        "reference_exponent": 4,
        "exponent_minus_reference": rep.exponent - 4,
    })
    print(write_summary(out / "scaling_summary.txt", items), end="")


def cmd_project_thickness(cfg: RunConfig, out: Path, seed: int) -> None:
    dev = build_device(cfg)
    kw = _op_kw(cfg)
    rows = el.thickness_projection(dev, cfg["thickness_list_m"], _excitation(cfg), **kw)
    write_csv(
        out / "thickness.csv",
        ("track_thickness_m", "r_coil_ohm", "r_opt_ohm", "p_max_w"),
        ((r.thickness, r.r_coil, r.r_opt, r.p_max) for r in rows),
    )
    print(write_summary(out / "thickness_summary.txt", {
        f"p_max_w_at_{r.thickness * 1e6:g}um": r.p_max for r in rows
    }), end="")


_X_COLUMNS = {"r_load_ohm": ("power_vs_load", 1.0), "f_hz": ("voltage_vs_frequency", 1.0)}
_Y_COLUMNS = {"p_load_w": 1.0, "p_load_uw": 1e-6, "v_rms_v": 1.0, "v_rms_mv": 1e-3}


def read_measured_csv(path: Path, cfg: RunConfig) -> ft.MeasuredCurve:
    """Measured curve with header ``<x column>,<y column>``; units come from the names."""
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ConfigError([f"{path}: empty measured-curve file"])
    header = [h.strip() for h in rows[0]]
    if len(header) != 2 or header[0] not in _X_COLUMNS or header[1] not in _Y_COLUMNS:
        raise ConfigError([
            f"{path}: header must be <x>,<y> with x in {sorted(_X_COLUMNS)} and y in {sorted(_Y_COLUMNS)}; got {header}"
        ])
    kind, _ = _X_COLUMNS[header[0]]
    if (kind == "power_vs_load") != header[1].startswith("p_"):
        raise ConfigError([f"{path}: {header[0]} must be paired with a {'power' if kind == 'power_vs_load' else 'voltage'} column"])
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise ConfigError([f"{path}: non-numeric value ({exc})"]) from exc
    return ft.MeasuredCurve(
        kind=kind,
        x=data[:, 0],
        y=data[:, 1] * _Y_COLUMNS[header[1]],
        excitation=_excitation(cfg),
        direction=cfg["branch_mode"],
        track_resonance=cfg["track_resonance_mode"] == "on" and kind == "power_vs_load",
    )


def cmd_fit(cfg: RunConfig, out: Path, seed: int) -> None:
    if not cfg["fit_csv_path"]:
        raise ConfigError(["fit requires fit_csv_path"])
    dev = build_device(cfg)
    curve = read_measured_csv(Path(cfg["fit_csv_path"]), cfg)
    free = [p.strip() for p in cfg["fit_free_mode"].split(",") if p.strip()]
    unknown = [p for p in free if p not in ft.FREE_PARAMETERS]
    if unknown or not free:
        raise ConfigError([f"fit_free_mode: unknown parameters {unknown}; choose from {ft.FREE_PARAMETERS}"])
    bounds = {
        "zeta_p": (cfg["zeta_p_min_ratio"], cfg["zeta_p_max_ratio"]),
        "coupling_k": (cfg["coupling_k_min_vspm"], cfg["coupling_k_max_vspm"]),
        "k_cub": (cfg["k_cub_min_npm3"], cfg["k_cub_max_npm3"]),
    }
    rep = ft.fit_parameters(curve, dev, free, bounds, n_starts=cfg["fit_starts_count"], seed=seed)
    model = curve.y * (1 + rep.residuals)
    x_name = "r_load_ohm" if curve.kind == "power_vs_load" else "f_hz"
    y_name = "p_load_w" if curve.kind == "power_vs_load" else "v_rms_v"
    write_csv(
        out / "fit_residuals.csv",
        (x_name, f"{y_name}_data", f"{y_name}_model", "rel_residual_ratio"),
        zip(curve.x, curve.y, model, rep.residuals),
    )
    items: dict[str, object] = {"converged": rep.converged}
    for name in free:
        items[f"{name} [{ft.PARAMETER_UNITS[name]}]"] = rep.parameters.get(name, "not-fitted")
    items.update({"sum_sq_rel_residual": rep.sum_sq_rel_residual, "iterations": rep.iterations, "seed": seed})
    for i, d in enumerate(rep.diagnostics, 1):
        items[f"diagnostic_{i}"] = d
    print(write_summary(out / "fit_report.txt", items), end="")
    if not rep.converged:
        raise FitFailed("fit did not converge; see fit_report.txt")


class FitFailed(RuntimeError):
    pass


def cmd_reproduce(cfg: RunConfig, out: Path, seed: int) -> None:
    cal = ft.prototype_calibration(cfg["k_cub_npm3"] if cfg.is_set("k_cub_npm3") else ft.DEFAULT_K_CUB)
    dev = cal.device
    # Up and down sweeps at the reported drive.
    both_cfg = replace(cfg, values={**cfg.values, "sweep_direction_mode": "both"})
    sw = _run_sweeps(dev.with_load(ft.REF_HIGH_LOAD), both_cfg, ft.REF_Y0)
    for d, res in sw.items():
        write_csv(out / f"hysteresis_sweep_{d}.csv", SWEEP_HEADER, _sweep_rows(res))
    hm = dyn.hysteresis_metrics(sw["up"], sw["down"])

    # Up-sweeps at increasing drive with saturating damping.
    sat = dev.with_load(ft.REF_HIGH_LOAD).with_resonator(gamma_sat=SATURATION_GAMMA_SAT)
    drive_rows = []
    drive_peaks = []
    up_cfg = replace(cfg, values={**cfg.values, "sweep_direction_mode": "up"})
    for y0 in DRIVE_LEVELS:
        res = _run_sweeps(sat, up_cfg, y0)["up"]
        drive_rows.extend((y0, f, z, v) for f, z, v in _sweep_rows(res))
        i = int(np.argmax(res.z_amp))
        drive_peaks.append((y0, res.f[i], res.z_amp[i], res.v_out_rms[i], float(hb.backbone(sat, res.z_amp[i]))))
    write_csv(out / "drive_sweeps.csv", ("y0_m", "f_hz", "z_amp_m", "v_rms_v"), drive_rows)
    write_csv(out / "drive_peaks.csv", ("y0_m", "f_peak_hz", "z_peak_m", "v_peak_v", "f_backbone_hz"), drive_peaks)

    # Power and voltage against load, on resonance.
    rs = np.logspace(0, 7, 57)
    load_rows = []
    for y0 in LOAD_SCAN_LEVELS:
        exc = Excitation(y0, ft.REF_FREQUENCY)
        for r in rs:
            op = el.operating_point(dev.with_load(float(r)), exc, track_resonance=True)
            load_rows.append((y0, r, op.p_load, op.v_rms, op.f))
    write_csv(out / "load_scan.csv", ("y0_m", "r_load_ohm", "p_load_w", "v_rms_v", "f_hz"), load_rows)

    exc = Excitation(ft.REF_Y0, cal.f_peak)
    npd = el.normalized_power_density(cal.p_max, dev.device_volume, ft.REF_Y0, cal.f_peak)
    thick = el.thickness_projection(dev, (15e-6, 20e-6, 30e-6, 40e-6), exc, track_resonance=True)
    scaling = el.scaling_study(dev, (0.5, 0.7, 1.0, 1.4, 2.0), exc)
    items = {
        "zeta_p": dev.resonator.zeta_p,
        "zeta_p_reported": ft.REF_ZETA_P,
        "coupling_k_vspm": dev.coupling_k,
        "r_coil_ohm": dev.r_coil,
        "k_lin_npm": dev.resonator.k_lin,
        "k_cub_npm3": dev.resonator.k_cub,
        "f_natural_hz": natural_frequency(dev.resonator),
        "f_peak_hz": cal.f_peak,
        "p_max_w": cal.p_max,
        "p_max_reported_w": ft.REF_P_MAX,
        "r_opt_ohm": cal.r_opt,
        "v_max_rms_v": cal.v_high_rms,
        "v_max_amplitude_v": cal.v_high_rms * math.sqrt(2),
        "v_max_reported_v": ft.REF_V_MAX,
        "raw_power_density_wpcm3": el.raw_power_density(cal.p_max, dev.device_volume),
        "raw_power_density_reported_max_wpcm3": 40e-6,
        "npd_wpcm3pg2": npd,
        "npd_reported_range_wpcm3pg2": "1.6e-06..3.8e-06",
        "hysteresis_width_hz": hm.width_hz,
        "hysteresis_f_peak_up_hz": hm.f_peak_up,
        "hysteresis_f_peak_down_hz": hm.f_peak_down,
        "hysteresis_v_peak_up_v": hm.v_peak_up,
        "hysteresis_v_peak_down_v": hm.v_peak_down,
        "drive_saturation_ratio": drive_peaks[-1][2] / drive_peaks[0][2],
        "p_max_at_40um_track_w": thick[-1].p_max,
        "p_max_ratio_40um_vs_15um": thick[-1].p_max / thick[0].p_max,
        "scaling_exponent": scaling.exponent,
        "scaling_r_squared": scaling.r_squared,
        "scaling_reference_exponent": 4,
    }
    print(write_summary(out / "summary.txt", items), end="")


HANDLERS: dict[str, Callable[[RunConfig, Path, int], None]] = {
    "coil": cmd_coil,
    "freq-response": cmd_freq_response,
    "sweep": cmd_sweep,
    "optimal-load": cmd_optimal_load,
    "fit": cmd_fit,
    "scaling": cmd_scaling,
    "project-thickness": cmd_project_thickness,
    "reproduce-paper": cmd_reproduce,
}


def run_command(name: str, config: RunConfig, out: Path, seed: int = 42) -> int:
    handler = HANDLERS.get(name)
    if handler is None:
        print(f"unknown command {name!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    try:
        handler(config, out, seed)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ParameterError, ConvergenceError, dyn.IntegrationError, el.OperatingPointError,
            el.ScalingError, ft.CalibrationError, FitFailed, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="microgen",
        description="Electromagnetic vibration harvester simulation and fitting.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="configuration keys:\n" + describe_keys(),
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", nargs="?", type=Path, help="flat key = value configuration file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=42, help="random seed for multi-start fitting")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    return run_command(args.command, cfg, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
