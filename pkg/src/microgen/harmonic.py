"""First-harmonic balance of the base-excited Duffing harvester.

With z ~ Z sin(wt - theta) and u = Z^2 the amplitude equation is

    ((k - m w^2 + 3/4 k3 u)^2 + (c w)^2) u = (m Y0 w^2)^2

a cubic in u.  Damping is the constant c_p + c_e; the amplitude-dependent
parasitic term (gamma_sat) is not represented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import DeviceParams, device_damping, natural_frequency


@dataclass(frozen=True)
class Root:
    amplitude: float
    stable: bool


@dataclass(frozen=True)
class FrequencyResponse:
    f: np.ndarray
    roots: np.ndarray  # (n, 3) amplitudes sorted ascending, NaN padded
    stable: np.ndarray  # (n, 3) bool, False where padded

    def n_roots(self) -> np.ndarray:
        return np.sum(~np.isnan(self.roots), axis=1)

    def upper(self) -> np.ndarray:
        return np.nanmax(self.roots, axis=1)

    def lower(self) -> np.ndarray:
        return self.roots[:, 0]


@dataclass(frozen=True)
class JumpFrequencies:
    f_jump_up: float | None  # where an up-sweep falls off the upper branch
    f_jump_down: float | None  # where a down-sweep jumps onto the upper branch
    diagnostic: str = ""

    @property
    def present(self) -> bool:
        return self.f_jump_up is not None and self.f_jump_down is not None


def _coefficients(device: DeviceParams, y0: float, f: float) -> tuple[float, float, float, float]:
    # Cubic A U^3 + B U^2 + U - 1 = 0 in U = u / s, with s the linear solution.
    # Returns (A, B, s, F^2).
    r = device.resonator
    w = 2 * math.pi * f
    c = device_damping(device).c_total
    force = r.mass * y0 * w * w
    D = r.k_lin - r.mass * w * w
    alpha = 0.75 * r.k_cub
    lin = D * D + (c * w) ** 2
    s = force * force / lin
    if s == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    return alpha * alpha * s**3 / (force * force), 2 * alpha * D * s * s / (force * force), s, force * force


def _cubic_real_roots(a: float, b: float, c: float, d: float) -> list[float]:
    """Real roots of a x^3 + b x^2 + c x + d by the trigonometric/Cardano forms."""
    p = (3 * a * c - b * b) / (3 * a * a)
    q = (2 * b**3 - 9 * a * b * c + 27 * a * a * d) / (27 * a**3)
    shift = -b / (3 * a)
    disc = -(4 * p**3 + 27 * q * q)
    if disc > 0:
        m = 2 * math.sqrt(-p / 3)
        arg = max(-1.0, min(1.0, 3 * q / (p * m)))
        theta = math.acos(arg) / 3
        ts = [m * math.cos(theta - 2 * math.pi * k / 3) for k in range(3)]
    elif p < 0:
        arg = -3 * abs(q) / (2 * p) * math.sqrt(-3 / p)
        ts = [-2 * math.copysign(1.0, q) * math.sqrt(-p / 3) * math.cosh(math.acosh(max(arg, 1.0)) / 3)]
    elif p > 0:
        ts = [-2 * math.sqrt(p / 3) * math.sinh(math.asinh(3 * q / (2 * p) * math.sqrt(3 / p)) / 3)]
    else:
        ts = [-math.copysign(abs(q) ** (1 / 3), q)]
    return [t + shift for t in ts]


def _newton(coef: tuple[float, float, float, float], x: float, max_iter: int = 20) -> float:
    a, b, c, d = coef
    for _ in range(max_iter):
        fx = ((a * x + b) * x + c) * x + d
        dfx = (3 * a * x + 2 * b) * x + c
        if dfx == 0:
            break
        step = fx / dfx
        x -= step
        if abs(step) <= 1e-15 * abs(x):
            break
    return x


def _reversed_roots(A: float, B: float) -> list[float]:
    # Real roots of V^3 - V^2 - B V - A.  The dominant root comes from the
    # closed form; the other two from the deflated quadratic
    # V^2 + p V + q, whose coefficients are formed without cancellation.
    coef = (1.0, -1.0, -B, -A)
    v1 = _newton(coef, max(_cubic_real_roots(*coef), key=abs))
    q = A / v1
    p = (q + B) / v1
    disc = p * p - 4 * q
    roots = [v1]
    if disc >= 0:
        t = -0.5 * (p + math.copysign(math.sqrt(disc), p))
        if t != 0:
            roots += [_newton(coef, t), _newton(coef, q / t)]
    return roots


def response_amplitudes(device: DeviceParams, y0: float, f: float) -> list[Root]:
    """Positive first-harmonic amplitudes Z (m) at forcing frequency ``f``.

    Roots are sorted ascending; with three roots the middle one is the
    unstable saddle branch.
    """
    A, B, s, _ = _coefficients(device, y0, f)
    if s == 0.0:
        return [Root(0.0, True)]
    if A == 0.0:
        return [Root(math.sqrt(s), True)]
    # Solve the monic reversal in V = 1/U, which stays well conditioned
    # however small the cubic coefficient A becomes.
    vs = _reversed_roots(A, B)
    us = sorted(1.0 / x for x in vs if x > 0 and math.isfinite(x))
    zs = [math.sqrt(x * s) for x in us]
    if len(zs) == 3:
        return [Root(zs[0], True), Root(zs[1], False), Root(zs[2], True)]
    return [Root(z, True) for z in zs]


def frequency_response(device: DeviceParams, y0: float, f_grid) -> FrequencyResponse:
    f_grid = np.asarray(f_grid, dtype=float)
    roots = np.full((len(f_grid), 3), np.nan)
    stable = np.zeros((len(f_grid), 3), dtype=bool)
    for i, f in enumerate(f_grid):
        for j, r in enumerate(response_amplitudes(device, y0, float(f))):
            roots[i, j] = r.amplitude
            stable[i, j] = r.stable
    return FrequencyResponse(f=f_grid, roots=roots, stable=stable)


def backbone(device: DeviceParams, z_grid) -> np.ndarray:
    """Free-vibration frequency (Hz) of the first-harmonic Duffing at amplitude Z."""
    r = device.resonator
    z = np.asarray(z_grid, dtype=float)
    return np.sqrt((r.k_lin + 0.75 * r.k_cub * z * z) / r.mass) / (2 * math.pi)


def _discriminant(device: DeviceParams, y0: float, f: float) -> float:
    A, B, s, _ = _coefficients(device, y0, f)
    if A == 0.0:
        return -1.0
    # Cubic discriminant of A U^3 + B U^2 + U - 1, positive for three real roots.
    return -18 * A * B + 4 * B**3 + B * B - 4 * A - 27 * A * A


def peak_response(device: DeviceParams, y0: float) -> tuple[float, float]:
    """Maximum amplitude over frequency and where it occurs, as (f_hz, Z).

    At a fixed amplitude level u the amplitude equation is quadratic in w^2;
    the peak is the level where its two frequency roots merge.
    """
    r = device.resonator
    m, k, a = r.mass, r.k_lin, 0.75 * r.k_cub
    c = device_damping(device).c_total
    if y0 == 0.0:
        return natural_frequency(r), 0.0
    y2 = y0 * y0
    # g(u) = c^2 u (c^2 - 4 m K') + 4 m^2 Y0^2 K'^2 with K' = k + a u
    q2 = -4 * m * c * c * a + 4 * m * m * y2 * a * a
    q1 = c**4 - 4 * m * c * c * k + 8 * m * m * y2 * k * a
    q0 = 4 * m * m * y2 * k * k
    if q2 == 0.0:
        cands = [-q0 / q1] if q1 != 0 else []
    else:
        dq = q1 * q1 - 4 * q2 * q0
        if dq < 0:
            cands = []
        else:
            sq = math.sqrt(dq)
            # Numerically stable pair.
            t = -0.5 * (q1 + math.copysign(sq, q1))
            cands = [t / q2, q0 / t] if t != 0 else []
    cands = sorted(u for u in cands if u > y2)
    if not cands:
        raise ValueError("response has no finite peak (forcing too strong for the damping)")
    u = cands[0]
    kp = k + a * u
    W = u * (2 * kp * m - c * c) / (2 * m * m * (u - y2))
    return math.sqrt(W) / (2 * math.pi), math.sqrt(u)


def jump_frequencies(device: DeviceParams, y0: float, *, n_scan: int = 4000, tol_hz: float = 1e-3) -> JumpFrequencies:
    """Saddle-node frequencies bounding the bistable band.

    The cubic discriminant is scanned between half the natural frequency and
    beyond the response peak; each sign change is bisected to ``tol_hz``.
    """
    if device.resonator.k_cub == 0.0:
        return JumpFrequencies(None, None, "linear resonator: single-valued response")
    if y0 == 0.0:
        return JumpFrequencies(None, None, "zero excitation")
    f_n = natural_frequency(device.resonator)
    try:
        f_top = max(peak_response(device, y0)[0], f_n)
    except ValueError as exc:
        return JumpFrequencies(None, None, f"no bracket: {exc}")
    grid = np.linspace(0.5 * f_n, 1.2 * f_top, n_scan)
    sgn = np.array([_discriminant(device, y0, float(f)) > 0 for f in grid])
    changes = np.nonzero(sgn[1:] != sgn[:-1])[0]
    if len(changes) == 0:
        return JumpFrequencies(None, None, "single-valued response over the scanned band")
    if len(changes) != 2:
        return JumpFrequencies(None, None, f"unexpected {len(changes)} discriminant sign changes")

    def bisect(lo: float, hi: float) -> float:
        s_lo = _discriminant(device, y0, lo) > 0
        while hi - lo > tol_hz:
            mid = 0.5 * (lo + hi)
            if (_discriminant(device, y0, mid) > 0) == s_lo:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    f_a = bisect(grid[changes[0]], grid[changes[0] + 1])
    f_b = bisect(grid[changes[1]], grid[changes[1] + 1])
    return JumpFrequencies(f_jump_up=f_b, f_jump_down=f_a)


def branch_amplitude(device: DeviceParams, y0: float, f: float, branch: str = "up") -> float:
    """Stable amplitude on the up-sweep (largest) or down-sweep (smallest) branch."""
    roots = response_amplitudes(device, y0, f)
    if branch == "up":
        return roots[-1].amplitude
    if branch == "down":
        return roots[0].amplitude
    raise ValueError(f"branch must be 'up' or 'down', got {branch!r}")


def branch_peak(device: DeviceParams, y0: float, branch: str = "up") -> tuple[float, float]:
    """Highest amplitude a quasi-static sweep in ``branch`` direction reaches, as (f_hz, Z)."""
    if branch == "up":
        return peak_response(device, y0)
    if branch != "down":
        raise ValueError(f"branch must be 'up' or 'down', got {branch!r}")
    jumps = jump_frequencies(device, y0)
    if not jumps.present:
        return peak_response(device, y0)
    # A down-sweep lands on the upper branch at the lower saddle-node and
    # decreases from there.
    f = jumps.f_jump_down
    return f, response_amplitudes(device, y0, f)[-1].amplitude


def phase_lag(device: DeviceParams, z_amp: float, f: float) -> float:
    """Lag theta of z = Z sin(wt - theta) behind the base-acceleration forcing."""
    r = device.resonator
    w = 2 * math.pi * f
    c = device_damping(device).c_total
    return math.atan2(c * w, r.k_lin - r.mass * w * w + 0.75 * r.k_cub * z_amp * z_amp)
