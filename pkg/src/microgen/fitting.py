"""Parameter recovery from measured curves and calibration of the reference prototype."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize

from .device import (
    CoilSpec,
    DeviceParams,
    ElectricalLoad,
    Excitation,
    MagnetSpec,
    ParameterError,
    ResonatorParams,
    k_lin_for_frequency,
)
from .electrical import OperatingPointError, operating_point, optimal_load
from .harmonic import peak_response
from .magnetics import build_layout, coil_resistance, transduction_coefficient

FREE_PARAMETERS = ("zeta_p", "coupling_k", "k_cub")
PARAMETER_UNITS = {"zeta_p": "1", "coupling_k": "V*s/m", "k_cub": "N/m^3"}

# Reported operating point of the 15 x 15 mm^2 prototype.
REF_FREQUENCY = 344.0  # Hz
REF_Y0 = 5.1e-6  # m
REF_P_MAX = 50e-6  # W
REF_V_MAX = 0.180  # V, rms or amplitude (not stated)
REF_ZETA_P = 0.008
REF_VOLUME = 1.35e-6  # m^3
REF_HIGH_LOAD = 1e5  # ohm
# Cubic membrane stiffness; not reported.  Chosen so the calibrated device is
# single-valued below Y0 ~ 2 um and clearly bistable at the 5.1 um drive.
DEFAULT_K_CUB = 4e9  # N/m^3


class CalibrationError(RuntimeError):
    def __init__(self, message: str, report: "CalibrationReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class MeasuredCurve:
    kind: str  # "power_vs_load" or "voltage_vs_frequency"
    x: np.ndarray
    y: np.ndarray
    excitation: Excitation
    direction: str = "up"
    track_resonance: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("power_vs_load", "voltage_vs_frequency"):
            raise ParameterError(f"unknown curve kind {self.kind!r}")
        if self.direction not in ("up", "down"):
            raise ParameterError(f"direction must be 'up' or 'down', got {self.direction!r}")
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.shape != y.shape or x.ndim != 1:
            raise ParameterError("x and y must be 1-D arrays of equal length")
        if len(x) < 5:
            raise ParameterError("a measured curve needs at least 5 points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ParameterError("curve values must be finite")
        if not np.all(np.diff(x) > 0):
            raise ParameterError("curve x values must be strictly increasing")
        if np.any(y < 0):
            raise ParameterError("curve y values must be >= 0")


@dataclass(frozen=True)
class FitReport:
    parameters: dict[str, float]
    sum_sq_rel_residual: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    units: dict[str, str] = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()
    start_residuals: tuple[float, ...] = ()


def model_curve(curve: MeasuredCurve, device: DeviceParams) -> np.ndarray:
    """Forward model evaluated at the curve's abscissae."""
    out = np.empty(len(curve.x))
    for i, x in enumerate(curve.x):
        if curve.kind == "power_vs_load":
            op = operating_point(
                device.with_load(float(x)), curve.excitation,
                branch=curve.direction, track_resonance=curve.track_resonance,
            )
            out[i] = op.p_load
        else:
            exc = Excitation(curve.excitation.amplitude_y0, float(x))
            out[i] = operating_point(device, exc, branch=curve.direction).v_rms
    return out


def _apply(template: DeviceParams, names: Sequence[str], values: Sequence[float]) -> DeviceParams:
    dev = template
    for name, val in zip(names, values):
        if name == "coupling_k":
            dev = replace(dev, coupling_k=float(val))
        else:
            dev = dev.with_resonator(**{name: float(val)})
    return dev


def fit_parameters(
    curve: MeasuredCurve,
    device_template: DeviceParams,
    free: Sequence[str],
    bounds: dict[str, tuple[float, float]],
    *,
    n_starts: int = 8,
    seed: int = 42,
    max_iter: int = 4000,
    window: int = 20,
    rel_improvement: float = 1e-8,
    residual_threshold: float | None = None,
) -> FitReport:
    """Least-squares recovery of ``free`` parameters from a measured curve.

    Minimizes the sum of squared relative residuals with Nelder-Mead in log
    parameter space, from ``n_starts`` log-uniform starts drawn with ``seed``.
    A start has converged when its best value improves by less than
    ``rel_improvement`` (relative) over ``window`` iterations.
    """
    free = list(free)
    if not free:
        raise ParameterError("at least one free parameter is required")
    for name in free:
        if name not in FREE_PARAMETERS:
            raise ParameterError(f"cannot fit {name!r}; choose from {FREE_PARAMETERS}")
        lo, hi = bounds[name]
        if not (0 < lo < hi and math.isfinite(hi)):
            raise ParameterError(f"bounds for {name} must satisfy 0 < lo < hi < inf")
    units = {n: PARAMETER_UNITS[n] for n in free}
    if residual_threshold is None:
        residual_threshold = 0.01 * len(curve.y)  # 10 % rms relative error

    if np.any(curve.y <= 0):
        return FitReport(
            parameters={},
            sum_sq_rel_residual=float("nan"),
            iterations=0,
            converged=False,
            residuals=np.full(len(curve.y), np.nan),
            units=units,
            diagnostics=("data contain non-positive values; relative residuals are undefined",),
        )

    log_lo = np.array([math.log(bounds[n][0]) for n in free])
    log_hi = np.array([math.log(bounds[n][1]) for n in free])

    def residuals(theta: np.ndarray) -> np.ndarray:
        dev = _apply(device_template, free, np.exp(theta))
        return (model_curve(curve, dev) - curve.y) / curve.y

    def objective(theta: np.ndarray) -> float:
        try:
            r = residuals(np.clip(theta, log_lo, log_hi))
        except (OperatingPointError, ParameterError, ValueError):
            return 1e30
        val = float(r @ r)
        return val if math.isfinite(val) else 1e30

    rng = np.random.default_rng(seed)
    starts = rng.uniform(log_lo, log_hi, size=(n_starts, len(free)))
    results = []
    for k, x0 in enumerate(starts):
        trace: list[float] = []

        def callback(intermediate_result):
            trace.append(float(intermediate_result.fun))
            if trace[-1] < 1e-28:
                raise StopIteration
            if len(trace) > window:
                old = trace[-window - 1]
                if old - trace[-1] <= rel_improvement * old:
                    raise StopIteration

        res = optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=list(zip(log_lo, log_hi)),
            callback=callback,
            options={"maxiter": max_iter, "xatol": 0.0, "fatol": 0.0, "adaptive": len(free) > 2},
        )
        stopped = len(trace) < max_iter
        results.append((float(res.fun), k, res.x, len(trace), stopped))

    # Lowest residual wins; ties go to the lowest start index.
    best_fun, best_k, best_x, iters, stopped = min(results, key=lambda r: (r[0], r[1]))
    at_bound = np.isclose(best_x, log_lo, rtol=0, atol=1e-6) | np.isclose(best_x, log_hi, rtol=0, atol=1e-6)
    diagnostics = [f"best of {n_starts} starts: start {best_k}, objective {best_fun:.6g}"]
    if not stopped:
        diagnostics.append(f"iteration limit {max_iter} reached")
    if np.any(at_bound):
        diagnostics.append("best parameters at bound: " + ", ".join(n for n, b in zip(free, at_bound) if b))
    if best_fun > residual_threshold:
        diagnostics.append(f"residual {best_fun:.4g} above threshold {residual_threshold:.4g}")
    converged = stopped and not np.any(at_bound) and best_fun <= residual_threshold
    params = dict(zip(free, (float(v) for v in np.exp(best_x))))
    if not converged:
        diagnostics.append("best candidate (not accepted): " + ", ".join(f"{n}={v:.6g}" for n, v in params.items()))
    try:
        resid = residuals(best_x)
    except (OperatingPointError, ParameterError, ValueError):
        resid = np.full(len(curve.y), np.nan)
    return FitReport(
        parameters=params if converged else {},
        sum_sq_rel_residual=best_fun,
        iterations=iters,
        converged=converged,
        residuals=resid,
        units=units,
        diagnostics=tuple(diagnostics),
        start_residuals=tuple(r[0] for r in results),
    )


# -- calibration of the reference prototype ------------------------------------


@dataclass(frozen=True)
class CalibrationReport:
    device: DeviceParams
    p_max: float
    r_opt: float
    f_peak: float
    z_peak: float
    v_high_rms: float
    v_error_rms: float  # relative error reading the reported voltage as rms
    v_error_amplitude: float  # ... as amplitude
    notes: tuple[str, ...]


def reference_hardware(gap: float | None = None) -> tuple[MagnetSpec, CoilSpec, float, float]:
    """Default magnet/coil, coil resistance and magnetics-derived K."""
    magnet = MagnetSpec() if gap is None else MagnetSpec(gap_z0=gap)
    coil = CoilSpec()
    layout = build_layout(coil)
    return magnet, coil, coil_resistance(layout, coil.resistivity), transduction_coefficient(magnet, layout, magnet.gap_z0)


def _tuned_device(base: DeviceParams, zeta_p: float, f_target: float, y0: float) -> tuple[DeviceParams, float]:
    # k_lin such that the up-sweep peak at the optimal load sits at f_target.
    dev = base.with_resonator(zeta_p=zeta_p)
    r_opt = dev.r_coil
    m = dev.mass
    for _ in range(3):
        trial = dev.with_load(r_opt)

        def off(k: float) -> float:
            return peak_response(trial.with_resonator(k_lin=k), y0)[0] - f_target

        k_hi = k_lin_for_frequency(m, f_target)
        k_lo = 0.5 * k_hi
        k = optimize.brentq(off, k_lo, k_hi, xtol=1e-12 * k_hi, rtol=1e-14)
        dev = dev.with_resonator(k_lin=k)
        r_opt = optimal_load(dev, Excitation(y0, f_target), track_resonance=True).r_opt
    return dev, r_opt


@functools.lru_cache(maxsize=4)
def prototype_calibration(k_cub: float = DEFAULT_K_CUB) -> CalibrationReport:
    """Calibrate the 15 x 15 mm^2 prototype to its reported operating point.

    Mass comes from the default magnet, K and R_coil from the magnetics model.
    zeta_p is solved so the resonance-tracked maximum power over load equals
    the reported 50 uW, with k_lin adjusted so that resonance sits at 344 Hz
    under those conditions.  The reported 180 mV is a consistency check,
    accepted if it matches either as rms or as amplitude within 20 %.
    """
    magnet, coil, r_coil, k_coupling = reference_hardware()
    m = magnet.mass
    base = DeviceParams(
        resonator=ResonatorParams(mass=m, k_lin=k_lin_for_frequency(m, REF_FREQUENCY), k_cub=k_cub, zeta_p=REF_ZETA_P),
        magnet=magnet,
        coil=coil,
        load=ElectricalLoad(REF_HIGH_LOAD),
        coupling_k=k_coupling,
        r_coil=r_coil,
        device_volume=REF_VOLUME,
    )
    exc = Excitation(REF_Y0, REF_FREQUENCY)

    def p_max(log_zeta: float) -> float:
        try:
            dev, r_opt = _tuned_device(base, math.exp(log_zeta), REF_FREQUENCY, REF_Y0)
        except ValueError:
            # Too little damping: the hardening base-excited peak is unbounded.
            return math.inf
        return operating_point(dev.with_load(r_opt), exc, track_resonance=True).p_load

    lo, hi = math.log(1e-3), math.log(0.2)
    if not (p_max(lo) > REF_P_MAX > p_max(hi)):
        raise CalibrationError("no parasitic damping in [1e-3, 0.2] reproduces the reported power")
    log_zeta = optimize.brentq(lambda z: p_max(z) / REF_P_MAX - 1, lo, hi, xtol=1e-12)
    dev, r_opt = _tuned_device(base, math.exp(log_zeta), REF_FREQUENCY, REF_Y0)
    at_opt = operating_point(dev.with_load(r_opt), exc, track_resonance=True)
    high = operating_point(dev.with_load(REF_HIGH_LOAD), exc, track_resonance=True)
    report = CalibrationReport(
        device=dev,
        p_max=at_opt.p_load,
        r_opt=r_opt,
        f_peak=at_opt.f,
        z_peak=at_opt.z_amp,
        v_high_rms=high.v_rms,
        v_error_rms=high.v_rms / REF_V_MAX - 1,
        v_error_amplitude=high.v_rms * math.sqrt(2) / REF_V_MAX - 1,
        notes=(
            f"mass {m:.4e} kg from a {magnet.side_a * 1e3:g}x{magnet.side_b * 1e3:g}x"
            f"{magnet.thickness * 1e3:g} mm magnet at {magnet.density:g} kg/m^3",
            f"K = {k_coupling:.5f} V*s/m at gap {magnet.gap_z0 * 1e3:g} mm; R_coil = {r_coil:.3f} ohm",
            f"k_cub = {k_cub:.4g} N/m^3 (not calibrated)",
        ),
    )
    if abs(report.p_max / REF_P_MAX - 1) > 0.2 or min(abs(report.v_error_rms), abs(report.v_error_amplitude)) > 0.2:
        raise CalibrationError("calibrated device misses the reported maxima by more than 20 %", report)
    return report


def calibrate_paper_device(k_cub: float = DEFAULT_K_CUB) -> DeviceParams:
    return prototype_calibration(k_cub).device
