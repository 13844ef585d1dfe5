"""Physical parameter types for the magnet-on-membrane electromagnetic harvester.

All quantities are SI.  Every type is a frozen dataclass that validates itself
on construction, so a value that exists is a value that can be simulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

# NdFeB defaults; the magnet material, thickness and density are not reported
# for the prototype, only its 7 x 7 mm footprint.
DEFAULT_REMANENCE = 1.2  # T
DEFAULT_DENSITY = 7500.0  # kg/m^3
DEFAULT_MAGNET_SIDE = 7e-3  # m
DEFAULT_MAGNET_THICKNESS = 2e-3  # m
DEFAULT_GAP = 0.5e-3  # m
CU_RESISTIVITY = 1.72e-8  # ohm m
DEFAULT_DEVICE_VOLUME = 1.35e-6  # m^3 (1.35 cm^3)


class ParameterError(ValueError):
    """Raised when a parameter set violates its physical invariants."""


def _check_finite(owner: str, **values: float) -> None:
    for name, val in values.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
            raise ParameterError(f"{owner}.{name} must be a finite number, got {val!r}")


def _check_positive(owner: str, **values: float) -> None:
    _check_finite(owner, **values)
    for name, val in values.items():
        if val <= 0:
            raise ParameterError(f"{owner}.{name} must be > 0, got {val!r}")


def _check_nonnegative(owner: str, **values: float) -> None:
    _check_finite(owner, **values)
    for name, val in values.items():
        if val < 0:
            raise ParameterError(f"{owner}.{name} must be >= 0, got {val!r}")


@dataclass(frozen=True)
class MagnetSpec:
    """Uniformly, vertically magnetized cuboid magnet.

    Attributes:
        side_a, side_b: footprint edges (m)
        thickness: height along the magnetization axis (m)
        remanence: Br (T); negative values flip the polarity
        density: kg/m^3
        gap_z0: rest distance from the coil plane to the magnet bottom face (m)
    """

    side_a: float = DEFAULT_MAGNET_SIDE
    side_b: float = DEFAULT_MAGNET_SIDE
    thickness: float = DEFAULT_MAGNET_THICKNESS
    remanence: float = DEFAULT_REMANENCE
    density: float = DEFAULT_DENSITY
    gap_z0: float = DEFAULT_GAP

    def __post_init__(self) -> None:
        _check_positive(
            "MagnetSpec",
            side_a=self.side_a,
            side_b=self.side_b,
            thickness=self.thickness,
            density=self.density,
            gap_z0=self.gap_z0,
        )
        # Polarity is carried by the sign of Br; zero is allowed so that
        # flux linearity can be exercised down to the trivial case.
        _check_finite("MagnetSpec", remanence=self.remanence)

    @property
    def volume(self) -> float:
        return self.side_a * self.side_b * self.thickness

    @property
    def mass(self) -> float:
        return self.density * self.volume


@dataclass(frozen=True)
class CoilSpec:
    """Planar square-spiral coil.

    The default track cross-section follows the body-text reading
    (20 um wide, 15 um apart, 15 um thick).
    """

    n_turns: int = 52
    track_width: float = 20e-6
    track_thickness: float = 15e-6
    track_separation: float = 15e-6
    outer_side: float = 10e-3
    resistivity: float = CU_RESISTIVITY

    def __post_init__(self) -> None:
        if not isinstance(self.n_turns, int) or isinstance(self.n_turns, bool) or self.n_turns < 1:
            raise ParameterError(f"CoilSpec.n_turns must be an integer >= 1, got {self.n_turns!r}")
        _check_positive(
            "CoilSpec",
            track_width=self.track_width,
            track_thickness=self.track_thickness,
            track_separation=self.track_separation,
            outer_side=self.outer_side,
            resistivity=self.resistivity,
        )
        if self.n_turns * self.pitch > self.outer_side / 2:
            raise ParameterError(
                f"{self.n_turns} turns at pitch {self.pitch:.3e} m do not fit in "
                f"outer side {self.outer_side:.3e} m"
            )

    @property
    def pitch(self) -> float:
        return self.track_width + self.track_separation


@dataclass(frozen=True)
class ResonatorParams:
    """Lumped single-degree-of-freedom membrane resonator.

    ``gamma_sat`` scales an amplitude-dependent parasitic damping
    c_p * (1 + gamma_sat * z^2).  It is phenomenological and zero by default.
    """

    mass: float
    k_lin: float
    k_cub: float = 0.0
    zeta_p: float = 0.008
    gamma_sat: float = 0.0

    def __post_init__(self) -> None:
        _check_positive("ResonatorParams", mass=self.mass, k_lin=self.k_lin)
        _check_nonnegative(
            "ResonatorParams", k_cub=self.k_cub, zeta_p=self.zeta_p, gamma_sat=self.gamma_sat
        )

    @property
    def omega_n(self) -> float:
        return math.sqrt(self.k_lin / self.mass)


@dataclass(frozen=True)
class Excitation:
    amplitude_y0: float
    frequency_hz: float

    def __post_init__(self) -> None:
        _check_nonnegative("Excitation", amplitude_y0=self.amplitude_y0)
        _check_positive("Excitation", frequency_hz=self.frequency_hz)

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.frequency_hz


@dataclass(frozen=True)
class ElectricalLoad:
    r_load: float = 1e5

    def __post_init__(self) -> None:
        _check_positive("ElectricalLoad", r_load=self.r_load)


@dataclass(frozen=True)
class DeviceParams:
    """Complete electromechanical description of one harvester."""

    resonator: ResonatorParams
    magnet: MagnetSpec
    coil: CoilSpec
    load: ElectricalLoad
    coupling_k: float
    r_coil: float
    device_volume: float = DEFAULT_DEVICE_VOLUME

    def __post_init__(self) -> None:
        _check_finite("DeviceParams", coupling_k=self.coupling_k)
        _check_positive("DeviceParams", r_coil=self.r_coil, device_volume=self.device_volume)

    @property
    def mass(self) -> float:
        return self.resonator.mass

    @property
    def r_load(self) -> float:
        return self.load.r_load

    def with_load(self, r_load: float) -> DeviceParams:
        return replace(self, load=ElectricalLoad(r_load))

    def with_resonator(self, **changes: float) -> DeviceParams:
        return replace(self, resonator=replace(self.resonator, **changes))


@dataclass(frozen=True)
class Damping:
    c_p: float
    c_e: float
    zeta_total: float

    @property
    def c_total(self) -> float:
        return self.c_p + self.c_e


def natural_frequency(resonator: ResonatorParams) -> float:
    """Undamped linear natural frequency in Hz."""
    return resonator.omega_n / (2 * math.pi)


def k_lin_for_frequency(mass: float, f_hz: float) -> float:
    """Linear stiffness that places the natural frequency of ``mass`` at ``f_hz``."""
    _check_positive("k_lin_for_frequency", mass=mass, f_hz=f_hz)
    return mass * (2 * math.pi * f_hz) ** 2


def damping_coefficients(
    resonator: ResonatorParams, coupling_k: float, r_coil: float, r_load: float
) -> Damping:
    """Parasitic and electrical viscous damping for a resistive load.

    The electrical term is the back-EMF force coefficient K^2 / (R_coil + R_load).
    """
    _check_finite("damping_coefficients", coupling_k=coupling_k, r_coil=r_coil, r_load=r_load)
    r_total = r_coil + r_load
    if r_total <= 0:
        raise ParameterError("r_coil + r_load must be > 0")
    w_n = resonator.omega_n
    c_p = 2 * resonator.zeta_p * resonator.mass * w_n
    c_e = coupling_k**2 / r_total
    return Damping(c_p=c_p, c_e=c_e, zeta_total=resonator.zeta_p + c_e / (2 * resonator.mass * w_n))


def device_damping(device: DeviceParams) -> Damping:
    return damping_coefficients(device.resonator, device.coupling_k, device.r_coil, device.r_load)
