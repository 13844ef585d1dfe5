"""Time-domain simulation of the base-excited electromechanical resonator.

The relative magnet displacement z obeys

    m z'' + (c_p (1 + gamma_sat z^2) + c_e) z' + k z + k3 z^3 = m Y0 w^2 sin(phi)

with phi = w t for fixed-frequency runs and a continuously accumulated phase
for frequency sweeps.  Integration is classical fixed-step RK4; the inner
loops are compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np

from .device import DeviceParams, Excitation, ParameterError, device_damping


class IntegrationError(RuntimeError):
    """Raised when the state becomes non-finite."""

    def __init__(self, message: str, step: int, time: float, frequency_hz: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.frequency_hz = frequency_hz


@dataclass(frozen=True)
class State:
    z: float
    v: float
    t: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.z, self.v, self.t)):
            raise ParameterError(f"State must be finite, got {self}")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    sample_dt: float
    forcing_hz: float | None = None

    def __post_init__(self) -> None:
        if self.sample_dt <= 0:
            raise ParameterError("sample_dt must be > 0")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ParameterError("trajectory time must be strictly increasing")

    @property
    def final(self) -> State:
        return State(float(self.z[-1]), float(self.v[-1]), float(self.t[-1]))


@dataclass(frozen=True)
class SteadyState:
    amplitude: float
    settled: bool
    last_cycle_amplitudes: tuple[float, float]

    @property
    def status(self) -> str:
        return "settled" if self.settled else "unsettled"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class SweepSpec:
    f_start: float
    f_end: float
    rate: float = 1.0
    direction: Direction = Direction.UP
    excitation_y0: float = 0.8e-6
    bin_width: float = 0.5
    steps_per_cycle: int = 64

    def __post_init__(self) -> None:
        for name in ("f_start", "f_end", "rate", "bin_width"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ParameterError(f"SweepSpec.{name} must be finite and > 0, got {val!r}")
        if not (math.isfinite(self.excitation_y0) and self.excitation_y0 >= 0):
            raise ParameterError("SweepSpec.excitation_y0 must be >= 0")
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.f_start == self.f_end:
            raise ParameterError("sweep range is empty: f_start == f_end")
        if (self.direction is Direction.UP) != (self.f_end > self.f_start):
            raise ParameterError(
                f"direction {self.direction.value!r} inconsistent with "
                f"f_start={self.f_start} -> f_end={self.f_end}"
            )
        if self.steps_per_cycle < 50:
            raise ParameterError("steps_per_cycle must be >= 50")


@dataclass(frozen=True)
class SweepResult:
    f: np.ndarray
    z_amp: np.ndarray
    v_out_rms: np.ndarray
    direction: Direction
    excitation_y0: float

    @property
    def bin_width(self) -> float:
        return float(abs(self.f[1] - self.f[0])) if len(self.f) > 1 else float("nan")


@dataclass(frozen=True)
class HysteresisMetrics:
    f_peak_up: float
    f_peak_down: float
    jump_down_f: float | None
    jump_up_f: float | None
    width_hz: float
    v_peak_up: float
    v_peak_down: float


# -- compiled kernels ---------------------------------------------------------


@numba.njit(cache=True)
def _accel(z, v, force, m, k, k3, cp, gam, ce):
    return (-(cp * (1.0 + gam * z * z) + ce) * v - k * z - k3 * z * z * z + force) / m


@numba.njit(cache=True)
def _rk4_fixed(z, v, t0, dt, n_steps, store_every, m, k, k3, cp, gam, ce, y0, w):
    n_out = n_steps // store_every + 1
    zs = np.empty(n_out)
    vs = np.empty(n_out)
    zs[0] = z
    vs[0] = v
    amp = m * y0 * w * w
    j = 1
    for i in range(n_steps):
        t = t0 + i * dt
        f1 = amp * math.sin(w * t)
        fh = amp * math.sin(w * (t + 0.5 * dt))
        f2 = amp * math.sin(w * (t + dt))
        k1z = v
        k1v = _accel(z, v, f1, m, k, k3, cp, gam, ce)
        k2z = v + 0.5 * dt * k1v
        k2v = _accel(z + 0.5 * dt * k1z, k2z, fh, m, k, k3, cp, gam, ce)
        k3z = v + 0.5 * dt * k2v
        k3v = _accel(z + 0.5 * dt * k2z, k3z, fh, m, k, k3, cp, gam, ce)
        k4z = v + dt * k3v
        k4v = _accel(z + dt * k3z, k4z, f2, m, k, k3, cp, gam, ce)
        z = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (math.isfinite(z) and math.isfinite(v)):
            return zs[:j], vs[:j], i + 1
        if (i + 1) % store_every == 0:
            zs[j] = z
            vs[j] = v
            j += 1
    return zs[:j], vs[:j], -1


@numba.njit(cache=True)
def _rk4_ramp(z, v, phase0, f0, rate, dt, n_steps, trail_from, m, k, k3, cp, gam, ce, y0):
    # Linear frequency ramp f(tau) = f0 + rate*tau with exact phase
    # phi(tau) = phase0 + 2 pi (f0 tau + rate tau^2 / 2).  Returns the end
    # state, end phase and the z extremes over steps >= trail_from.
    two_pi = 2.0 * math.pi
    zmax = -1e300
    zmin = 1e300
    for i in range(n_steps):
        tau = i * dt
        ta = tau
        tb = tau + 0.5 * dt
        tc = tau + dt
        fa = f0 + rate * ta
        fb = f0 + rate * tb
        fc = f0 + rate * tc
        ga = m * y0 * (two_pi * fa) ** 2 * math.sin(phase0 + two_pi * (f0 * ta + 0.5 * rate * ta * ta))
        gb = m * y0 * (two_pi * fb) ** 2 * math.sin(phase0 + two_pi * (f0 * tb + 0.5 * rate * tb * tb))
        gc = m * y0 * (two_pi * fc) ** 2 * math.sin(phase0 + two_pi * (f0 * tc + 0.5 * rate * tc * tc))
        k1z = v
        k1v = _accel(z, v, ga, m, k, k3, cp, gam, ce)
        k2z = v + 0.5 * dt * k1v
        k2v = _accel(z + 0.5 * dt * k1z, k2z, gb, m, k, k3, cp, gam, ce)
        k3z = v + 0.5 * dt * k2v
        k3v = _accel(z + 0.5 * dt * k2z, k3z, gb, m, k, k3, cp, gam, ce)
        k4z = v + dt * k3v
        k4v = _accel(z + dt * k3z, k4z, gc, m, k, k3, cp, gam, ce)
        z = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (math.isfinite(z) and math.isfinite(v)):
            return z, v, 0.0, zmax, zmin, i + 1
        if i + 1 >= trail_from:
            if z > zmax:
                zmax = z
            if z < zmin:
                zmin = z
    T = n_steps * dt
    phase = phase0 + two_pi * (f0 * T + 0.5 * rate * T * T)
    return z, v, phase - two_pi * math.floor(phase / two_pi), zmax, zmin, -1


def _mech_args(device: DeviceParams) -> tuple[float, ...]:
    r = device.resonator
    d = device_damping(device)
    return (r.mass, r.k_lin, r.k_cub, d.c_p, r.gamma_sat, d.c_e)


# -- public operations ----------------------------------------------------------


def ode_rhs(state: State, device: DeviceParams, excitation: Excitation) -> tuple[float, float]:
    """Right-hand side (dz/dt, dv/dt) at ``state``."""
    m, k, k3, cp, gam, ce = _mech_args(device)
    w = excitation.omega
    force = m * excitation.amplitude_y0 * w * w * math.sin(w * state.t)
    return state.v, float(_accel(state.z, state.v, force, m, k, k3, cp, gam, ce))


def integrate(
    device: DeviceParams,
    excitation: Excitation,
    duration: float,
    dt: float,
    initial: State | None = None,
    *,
    store_every: int = 1,
) -> Trajectory:
    """Fixed-step RK4 integration at constant forcing frequency.

    ``dt`` must resolve the forcing with at least 50 steps per cycle.  Every
    ``store_every``-th state is kept.
    """
    if not (duration > 0 and math.isfinite(duration)):
        raise ParameterError("duration must be > 0")
    if not (dt > 0 and dt <= 1.0 / (50.0 * excitation.frequency_hz) * (1 + 1e-12)):
        raise ParameterError(
            f"dt={dt:g} s does not resolve {excitation.frequency_hz:g} Hz with 50 steps per cycle"
        )
    init = initial or State(0.0, 0.0, 0.0)
    n_steps = int(round(duration / dt))
    m, k, k3, cp, gam, ce = _mech_args(device)
    zs, vs, fail = _rk4_fixed(
        init.z, init.v, init.t, dt, n_steps, store_every,
        m, k, k3, cp, gam, ce, excitation.amplitude_y0, excitation.omega,
    )
    if fail >= 0:
        raise IntegrationError(
            f"state became non-finite at step {fail} (t={init.t + fail * dt:.6g} s)",
            step=fail,
            time=init.t + fail * dt,
            frequency_hz=excitation.frequency_hz,
        )
    t = init.t + dt * store_every * np.arange(len(zs))
    return Trajectory(t=t, z=zs, v=vs, sample_dt=dt * store_every, forcing_hz=excitation.frequency_hz)


def _refined_extreme(y: np.ndarray, i: int, sign: float) -> float:
    # Vertex of the parabola through three samples around a discrete extreme.
    if i == 0 or i == len(y) - 1:
        return float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return float(b)
    p = 0.5 * (a - c) / denom
    val = b - 0.25 * (a - c) * p
    return float(val) if sign * (val - b) >= 0 else float(b)


def _half_p2p(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    hi = _refined_extreme(y, int(np.argmax(y)), 1.0)
    lo = _refined_extreme(y, int(np.argmin(y)), -1.0)
    return 0.5 * (hi - lo)


def steady_state_amplitude(
    traj: Trajectory,
    settle_fraction: float = 0.5,
    *,
    period: float | None = None,
    min_cycles: int = 50,
    tol: float = 0.01,
) -> SteadyState:
    """Half peak-to-peak of z after discarding the first ``settle_fraction``.

    The result is flagged unsettled when the last two forcing cycles differ in
    amplitude by more than ``tol``.
    """
    if period is None:
        if traj.forcing_hz is None:
            raise ParameterError("period is required for trajectories without a forcing frequency")
        period = 1.0 / traj.forcing_hz
    if not 0 <= settle_fraction < 1:
        raise ParameterError("settle_fraction must be in [0, 1)")
    start = int(len(traj.z) * settle_fraction)
    window = traj.z[start:]
    per_cycle = period / traj.sample_dt
    n_cycles = len(window) / per_cycle
    if n_cycles < min_cycles:
        raise ParameterError(
            f"retained window spans {n_cycles:.1f} cycles; at least {min_cycles} are required"
        )
    amplitude = _half_p2p(window)
    n = int(round(per_cycle))
    last = _half_p2p(window[-n:])
    prev = _half_p2p(window[-2 * n : -n])
    scale = max(last, prev)
    settled = scale == 0.0 or abs(last - prev) <= tol * scale
    return SteadyState(amplitude=amplitude, settled=settled, last_cycle_amplitudes=(prev, last))


def output_voltage_rms(device: DeviceParams, z_amp, f_hz):
    """Load voltage (rms) for a sinusoidal displacement amplitude."""
    divider = device.r_load / (device.r_coil + device.r_load)
    return device.coupling_k * np.asarray(z_amp) * 2 * math.pi * np.asarray(f_hz) / math.sqrt(2) * divider


def sweep(device: DeviceParams, spec: SweepSpec, initial: State | None = None) -> SweepResult:
    """Quasi-static directional frequency sweep with state carried between bins.

    The frequency ramps linearly at ``spec.rate``; each bin's envelope is half
    the peak-to-peak displacement over the trailing half of the bin.
    """
    f_max = max(spec.f_start, spec.f_end)
    f_min = min(spec.f_start, spec.f_end)
    # Quasi-static contract: < 0.1 % frequency change per forcing cycle.
    if spec.rate / f_min**2 >= 1e-3:
        raise ParameterError(
            f"sweep rate {spec.rate:g} Hz/s is too fast for quasi-static response at {f_min:g} Hz"
        )
    span = abs(spec.f_end - spec.f_start)
    n_bins = max(1, int(math.ceil(span / spec.bin_width - 1e-9)))
    bin_w = span / n_bins
    sign = 1.0 if spec.direction is Direction.UP else -1.0
    dt = 1.0 / (spec.steps_per_cycle * f_max)
    steps_per_bin = max(1, int(round(bin_w / spec.rate / dt)))
    bin_dt = bin_w / spec.rate / steps_per_bin
    m, k, k3, cp, gam, ce = _mech_args(device)
    state = initial or State(0.0, 0.0, 0.0)
    z, v, phase = state.z, state.v, 0.0
    f_centres = np.empty(n_bins)
    amps = np.empty(n_bins)
    for b in range(n_bins):
        f0 = spec.f_start + sign * b * bin_w
        z, v, phase, zmax, zmin, fail = _rk4_ramp(
            z, v, phase, f0, sign * spec.rate, bin_dt, steps_per_bin, steps_per_bin // 2,
            m, k, k3, cp, gam, ce, spec.excitation_y0,
        )
        if fail >= 0:
            raise IntegrationError(
                f"sweep blew up near {f0:.3f} Hz (bin {b}, step {fail})",
                step=fail,
                time=b * bin_w / spec.rate + fail * bin_dt,
                frequency_hz=f0,
            )
        f_centres[b] = f0 + sign * 0.5 * bin_w
        amps[b] = 0.5 * (zmax - zmin)
    return SweepResult(
        f=f_centres,
        z_amp=amps,
        v_out_rms=output_voltage_rms(device, amps, f_centres),
        direction=spec.direction,
        excitation_y0=spec.excitation_y0,
    )


def _largest_jump(result: SweepResult, drop: bool, threshold: float) -> float | None:
    a = result.z_amp
    if len(a) < 2:
        return None
    d = np.diff(a)
    if drop:
        d = -d
    i = int(np.argmax(d))
    if d[i] <= threshold * float(np.max(a)):
        return None
    return float(0.5 * (result.f[i] + result.f[i + 1]))


def hysteresis_metrics(up: SweepResult, down: SweepResult, *, jump_threshold: float = 0.3) -> HysteresisMetrics:
    """Peak and jump locations of a pair of opposite sweeps.

    A jump is the largest single-bin amplitude change in the sweep direction
    (a drop on the up-sweep, a rise on the down-sweep); it is reported only
    when it exceeds ``jump_threshold`` times that sweep's peak amplitude.
    """
    lo = max(up.f.min(), down.f.min())
    hi = min(up.f.max(), down.f.max())
    if lo >= hi:
        raise ParameterError("up and down sweeps do not overlap in frequency")
    iu = int(np.argmax(up.z_amp))
    idn = int(np.argmax(down.z_amp))
    return HysteresisMetrics(
        f_peak_up=float(up.f[iu]),
        f_peak_down=float(down.f[idn]),
        jump_down_f=_largest_jump(up, drop=True, threshold=jump_threshold),
        jump_up_f=_largest_jump(down, drop=False, threshold=jump_threshold),
        width_hz=float(up.f[iu] - down.f[idn]),
        v_peak_up=float(up.v_out_rms[iu]),
        v_peak_down=float(down.v_out_rms[idn]),
    )


def cycle_power_balance(device: DeviceParams, excitation: Excitation, traj: Trajectory, n_cycles: int = 20) -> dict[str, float]:
    """Cycle-averaged input, parasitic, electrical and load power over the last ``n_cycles``."""
    if traj.forcing_hz is None:
        raise ParameterError("trajectory has no forcing frequency")
    per = int(round(n_cycles / traj.forcing_hz / traj.sample_dt))
    t, z, v = traj.t[-per - 1 :], traj.z[-per - 1 :], traj.v[-per - 1 :]
    m, k, k3, cp, gam, ce = _mech_args(device)
    w = excitation.omega
    force = m * excitation.amplitude_y0 * w * w * np.sin(w * t)

    def mean(y: np.ndarray) -> float:
        # Trapezoid over whole cycles.
        return float(np.trapezoid(y, t) / (t[-1] - t[0]))

    emf = device.coupling_k * v
    i_load = emf / (device.r_coil + device.r_load)
    return {
        "input": mean(force * v),
        "parasitic": mean(cp * (1 + gam * z * z) * v * v),
        "electrical": mean(ce * v * v),
        "load": mean(i_load * i_load * device.r_load),
    }
