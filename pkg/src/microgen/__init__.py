"""Simulation, optimization and fitting for magnet-on-membrane electromagnetic vibration harvesters."""

from .device import (
    CoilSpec,
    DeviceParams,
    ElectricalLoad,
    Excitation,
    MagnetSpec,
    ParameterError,
    ResonatorParams,
    damping_coefficients,
    natural_frequency,
)
from .fitting import calibrate_paper_device

__all__ = [
    "CoilSpec",
    "DeviceParams",
    "ElectricalLoad",
    "Excitation",
    "MagnetSpec",
    "ParameterError",
    "ResonatorParams",
    "calibrate_paper_device",
    "damping_coefficients",
    "natural_frequency",
]
__version__ = "0.1.0"
