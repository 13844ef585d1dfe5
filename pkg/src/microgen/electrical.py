"""Load-side outputs: voltage, power, optimal load, power density and scaling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .device import DeviceParams, Excitation, MagnetSpec, CoilSpec, ParameterError, natural_frequency
from .dynamics import output_voltage_rms
from .harmonic import branch_amplitude, branch_peak
from .magnetics import build_layout, coil_resistance, transduction_coefficient

G = 9.81  # m/s^2 per g


class OperatingPointError(RuntimeError):
    pass


class ScalingError(ValueError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    f: float
    y0: float
    r_load: float
    z_amp: float
    v_rms: float
    p_load: float


@dataclass(frozen=True)
class LoadOptimum:
    r_opt: float
    p_max: float
    point: OperatingPoint
    unimodal: bool = True


@dataclass(frozen=True)
class ScalingReport:
    scales: np.ndarray
    npd: np.ndarray
    p_max: np.ndarray
    exponent: float
    intercept: float
    r_squared: float
    residual: float
    assumptions: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class ThicknessRow:
    thickness: float
    r_coil: float
    r_opt: float
    p_max: float


def output_voltage(device: DeviceParams, z_amp: float, f: float) -> float:
    """rms load voltage for displacement amplitude ``z_amp`` at ``f`` Hz."""
    return float(output_voltage_rms(device, z_amp, f))


def operating_point(
    device: DeviceParams,
    excitation: Excitation,
    *,
    branch: str = "up",
    track_resonance: bool = False,
) -> OperatingPoint:
    """Steady operating point from the harmonic-balance amplitude.

    ``branch="up"`` takes the largest stable root (what an increasing
    frequency sweep holds), ``"down"`` the smallest.  With
    ``track_resonance`` the excitation frequency is ignored and the response
    peak reached by a sweep in that direction is used instead, as when the
    drive is kept on resonance while the load changes.
    """
    y0 = excitation.amplitude_y0
    if y0 == 0.0:
        return OperatingPoint(excitation.frequency_hz, 0.0, device.r_load, 0.0, 0.0, 0.0)
    try:
        if track_resonance:
            f, z = branch_peak(device, y0, branch)
        else:
            f = excitation.frequency_hz
            z = branch_amplitude(device, y0, f, branch)
    except ValueError as exc:
        raise OperatingPointError(str(exc)) from exc
    if not (math.isfinite(z) and z >= 0):
        raise OperatingPointError(f"no admissible response amplitude at {excitation}")
    v = output_voltage(device, z, f)
    return OperatingPoint(f=f, y0=y0, r_load=device.r_load, z_amp=z, v_rms=v, p_load=v * v / device.r_load)


def load_power(device: DeviceParams, excitation: Excitation, r_load: float, **kw) -> float:
    return operating_point(device.with_load(r_load), excitation, **kw).p_load


def _golden_max(fn, lo: float, hi: float, tol: float) -> float:
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def optimal_load(
    device: DeviceParams,
    excitation: Excitation,
    r_range: tuple[float, float] = (1.0, 1e7),
    *,
    rtol: float = 1e-4,
    n_prescan: int = 81,
    **kw,
) -> LoadOptimum:
    """Load resistance maximizing delivered power.

    A log-spaced pre-scan checks unimodality and brackets the maximum, which
    a golden-section search in ln(R) then refines to ``rtol``.  If the pre-scan
    is not unimodal the dense-grid argmax is returned with a warning.
    """
    r_lo, r_hi = r_range
    if not (0 < r_lo < r_hi) or math.log10(r_hi / r_lo) < 3:
        raise ParameterError("r_range must span at least three decades")
    x = np.linspace(math.log(r_lo), math.log(r_hi), n_prescan)
    p = np.array([load_power(device, excitation, math.exp(xi), **kw) for xi in x])
    i = int(np.argmax(p))
    d = np.sign(np.diff(p))
    unimodal = bool(np.all(d[:i] >= 0) and np.all(d[i:] <= 0))
    if not unimodal:
        warnings.warn("P(R_load) pre-scan is not unimodal; using dense-grid argmax", RuntimeWarning)
        dense = np.linspace(x[max(i - 1, 0)], x[min(i + 1, len(x) - 1)], 2001)
        pd = np.array([load_power(device, excitation, math.exp(xi), **kw) for xi in dense])
        x_opt = float(dense[int(np.argmax(pd))])
    else:
        a = x[max(i - 1, 0)]
        b = x[min(i + 1, len(x) - 1)]
        x_opt = _golden_max(lambda xi: load_power(device, excitation, math.exp(xi), **kw), a, b, rtol)
    r_opt = math.exp(x_opt)
    point = operating_point(device.with_load(r_opt), excitation, **kw)
    return LoadOptimum(r_opt=r_opt, p_max=point.p_load, point=point, unimodal=unimodal)


_POWER_UNITS = {"W": 1.0, "mW": 1e-3, "uW": 1e-6}
_VOLUME_UNITS = {"m3": 1.0, "cm3": 1e-6, "mm3": 1e-9}


def acceleration_g(y0: float, f: float) -> float:
    return y0 * (2 * math.pi * f) ** 2 / G


def raw_power_density(p: float, volume: float, *, power_unit: str = "W", volume_unit: str = "m3") -> float:
    """Power per volume in W/cm^3."""
    return p * _POWER_UNITS[power_unit] / (volume * _VOLUME_UNITS[volume_unit] / 1e-6)


def normalized_power_density(
    p: float, volume: float, y0: float, f: float, *, power_unit: str = "W", volume_unit: str = "m3"
) -> float:
    """Power density normalized by squared acceleration, W/cm^3/g^2."""
    if min(p, volume, y0, f) <= 0:
        raise ParameterError("power, volume, Y0 and f must all be positive")
    a_g = acceleration_g(y0, f)
    return raw_power_density(p, volume, power_unit=power_unit, volume_unit=volume_unit) / (a_g * a_g)


def scale_geometry(magnet: MagnetSpec, coil: CoilSpec, s: float) -> tuple[MagnetSpec, CoilSpec]:
    m = replace(
        magnet,
        side_a=magnet.side_a * s,
        side_b=magnet.side_b * s,
        thickness=magnet.thickness * s,
        gap_z0=magnet.gap_z0 * s,
    )
    c = replace(
        coil,
        track_width=coil.track_width * s,
        track_thickness=coil.track_thickness * s,
        track_separation=coil.track_separation * s,
        outer_side=coil.outer_side * s,
    )
    return m, c


SCALING_ASSUMPTIONS = (
    "all linear dimensions (magnet, gap, coil tracks and outline) scale by s; turn count fixed",
    "mass ~ s^3, k_lin ~ s, so each device resonates at f_n(s) = f_n(1) / s",
    "linear resonator (k_cub = 0): the cubic stiffness has no geometric scaling law",
    "base acceleration amplitude held at the reference value; each device driven at its own f_n",
    "K and R_coil rescaled by the magnetics model relative to the reference geometry",
    "power taken at the optimal load of each device",
)


def scaling_study(base_device: DeviceParams, s_list, excitation: Excitation) -> ScalingReport:
    """Power-density exponent of geometrically similar devices.

    ``excitation`` fixes the reference base acceleration Y0 (2 pi f)^2.
    The log-log exponent of normalized power density versus scale factor is
    fitted by least squares.
    """
    s_arr = np.asarray(list(s_list), dtype=float)
    if len(s_arr) < 5:
        raise ScalingError("scaling study needs at least 5 scale points")
    if np.any(s_arr <= 0) or not np.all(np.isfinite(s_arr)):
        raise ScalingError("scale factors must be finite and > 0")
    if np.ptp(np.log(s_arr)) == 0:
        raise ScalingError("scale factors are all equal; the exponent is undefined")
    accel = excitation.amplitude_y0 * excitation.omega**2
    if accel <= 0:
        raise ScalingError("reference excitation must be non-zero")

    base_layout = build_layout(base_device.coil)
    k_ref = transduction_coefficient(base_device.magnet, base_layout, base_device.magnet.gap_z0)
    r_ref = coil_resistance(base_layout, base_device.coil.resistivity)
    res = base_device.resonator
    npd, pmax = [], []
    for s in s_arr:
        magnet, coil = scale_geometry(base_device.magnet, base_device.coil, float(s))
        layout = build_layout(coil)
        k_s = transduction_coefficient(magnet, layout, magnet.gap_z0)
        dev = replace(
            base_device,
            magnet=magnet,
            coil=coil,
            resonator=replace(res, mass=res.mass * s**3, k_lin=res.k_lin * s, k_cub=0.0),
            coupling_k=base_device.coupling_k * k_s / k_ref,
            r_coil=base_device.r_coil * coil_resistance(layout, coil.resistivity) / r_ref,
            device_volume=base_device.device_volume * s**3,
        )
        f_s = natural_frequency(dev.resonator)
        exc = Excitation(accel / (2 * math.pi * f_s) ** 2, f_s)
        opt = optimal_load(dev, exc)
        pmax.append(opt.p_max)
        npd.append(normalized_power_density(opt.p_max, dev.device_volume, exc.amplitude_y0, f_s))
    x = np.log(s_arr)
    y = np.log(np.asarray(npd))
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    if not math.isfinite(slope):
        raise ScalingError("log-log fit produced a non-finite exponent")
    return ScalingReport(
        scales=s_arr,
        npd=np.asarray(npd),
        p_max=np.asarray(pmax),
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        residual=ss_res,
        assumptions=SCALING_ASSUMPTIONS,
    )


def thickness_projection(device: DeviceParams, t_list, excitation: Excitation, **kw) -> list[ThicknessRow]:
    """Optimal-load power as the electroplated track thickness changes."""
    rows = []
    for t in t_list:
        if not 5e-6 <= t <= 100e-6:
            raise ParameterError(f"track thickness {t:g} m outside the 5-100 um fabrication range")
        coil = replace(device.coil, track_thickness=float(t))
        r_coil = coil_resistance(build_layout(coil), coil.resistivity)
        dev = replace(device, coil=coil, r_coil=r_coil)
        opt = optimal_load(dev, excitation, **kw)
        rows.append(ThicknessRow(thickness=float(t), r_coil=r_coil, r_opt=opt.r_opt, p_max=opt.p_max))
    return rows
