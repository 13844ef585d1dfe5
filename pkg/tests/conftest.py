import pytest

from microgen.device import CoilSpec, DeviceParams, ElectricalLoad, MagnetSpec, ResonatorParams, k_lin_for_frequency
from microgen.fitting import prototype_calibration


def simple_device(
    *,
    f_n: float = 300.0,
    zeta_p: float = 0.008,
    k_cub: float = 0.0,
    gamma_sat: float = 0.0,
    coupling_k: float = 0.0,
    r_coil: float = 100.0,
    r_load: float = 1e5,
) -> DeviceParams:
    """Small device with explicit coupling, bypassing the magnetics model."""
    magnet = MagnetSpec()
    m = magnet.mass
    res = ResonatorParams(mass=m, k_lin=k_lin_for_frequency(m, f_n), k_cub=k_cub, zeta_p=zeta_p, gamma_sat=gamma_sat)
    return DeviceParams(
        resonator=res,
        magnet=magnet,
        coil=CoilSpec(),
        load=ElectricalLoad(r_load),
        coupling_k=coupling_k,
        r_coil=r_coil,
    )


@pytest.fixture(scope="session")
def calibration():
    return prototype_calibration()


@pytest.fixture(scope="session")
def proto_device(calibration):
    return calibration.device
