from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from microgen.device import Excitation, ParameterError
from microgen.fitting import (
    REF_FREQUENCY,
    REF_Y0,
    MeasuredCurve,
    fit_parameters,
    model_curve,
    prototype_calibration,
)

EXC = Excitation(REF_Y0, REF_FREQUENCY)
R = np.logspace(0, 6, 15)
F = np.linspace(325.0, 350.0, 15)
BOUNDS = {"zeta_p": (1e-3, 0.1), "coupling_k": (1e-2, 10.0), "k_cub": (1e8, 1e11)}
TRUE = {"zeta_p": 0.008, "coupling_k": 2.0, "k_cub": 4e9}


@pytest.fixture(scope="module")
def template(proto_device):
    # Strong coupling, so electrical and parasitic damping are comparable.
    return replace(proto_device, coupling_k=2.0).with_resonator(zeta_p=0.008)


def synth(kind, device, noise=0.0, seed=42):
    x = R if kind == "power_vs_load" else F
    probe = MeasuredCurve(kind, x, np.ones_like(x), EXC, track_resonance=kind == "power_vs_load")
    y = model_curve(probe, device)
    if noise:
        y = y * (1 + noise * np.random.default_rng(seed).standard_normal(len(y)))
    return replace(probe, y=y)


def perturbed(template, names):
    # Start far from the truth so the fit has to move.
    kw = {n: TRUE[n] * 2.5 for n in names if n != "coupling_k"}
    dev = template.with_resonator(**kw) if kw else template
    if "coupling_k" in names:
        dev = replace(dev, coupling_k=0.5)
    return dev


def test_curve_validation():
    with pytest.raises(ParameterError):
        MeasuredCurve("power_vs_load", [1, 2, 3], [1, 1, 1], EXC)
    with pytest.raises(ParameterError):
        MeasuredCurve("power_vs_load", [1, 3, 2, 4, 5], [1] * 5, EXC)
    with pytest.raises(ParameterError):
        MeasuredCurve("power_vs_load", [1, 2, 3, 4, 5], [1, 1, -1, 1, 1], EXC)
    with pytest.raises(ParameterError):
        MeasuredCurve("impedance", [1, 2, 3, 4, 5], [1] * 5, EXC)


def test_noiseless_round_trip(template):
    curve = synth("power_vs_load", template)
    rep = fit_parameters(curve, perturbed(template, ["zeta_p", "coupling_k"]), ["zeta_p", "coupling_k"], BOUNDS)
    assert rep.converged
    assert rep.parameters["zeta_p"] == pytest.approx(0.008, rel=1e-2)
    assert rep.parameters["coupling_k"] == pytest.approx(2.0, rel=1e-2)
    assert rep.sum_sq_rel_residual < 1e-10
    assert rep.units == {"zeta_p": "1", "coupling_k": "V*s/m"}


def test_noisy_round_trip(template):
    curve = synth("power_vs_load", template, noise=0.05)
    rep = fit_parameters(curve, template, ["zeta_p", "coupling_k"], BOUNDS, seed=42)
    assert rep.converged
    assert rep.parameters["zeta_p"] == pytest.approx(0.008, rel=0.1)
    assert rep.parameters["coupling_k"] == pytest.approx(2.0, rel=0.1)


@pytest.mark.parametrize(
    "free", [c for n in (1, 2) for c in combinations(("zeta_p", "coupling_k", "k_cub"), n)]
)
def test_subset_identifiability(template, free):
    free = list(free)
    kind = "voltage_vs_frequency" if "k_cub" in free else "power_vs_load"
    curve = synth(kind, template)
    rep = fit_parameters(curve, perturbed(template, free), free, BOUNDS)
    assert rep.converged, rep.diagnostics
    for name in free:
        assert rep.parameters[name] == pytest.approx(TRUE[name], rel=1e-2)


def test_more_starts_never_worse(template):
    curve = synth("power_vs_load", template, noise=0.05)
    free = ["zeta_p", "coupling_k"]
    few = fit_parameters(curve, template, free, BOUNDS, n_starts=2)
    many = fit_parameters(curve, template, free, BOUNDS, n_starts=8)
    assert many.sum_sq_rel_residual <= few.sum_sq_rel_residual


def test_zero_coupling_data_not_fitted(template):
    flat = synth("power_vs_load", replace(template, coupling_k=0.0))
    assert np.all(flat.y == 0)
    rep = fit_parameters(flat, template, ["zeta_p", "coupling_k"], BOUNDS)
    assert not rep.converged
    assert rep.parameters == {}
    assert rep.diagnostics


def test_unreachable_data_reports_bound(template):
    curve = synth("power_vs_load", template)
    huge = replace(curve, y=curve.y * 1e6)
    rep = fit_parameters(huge, template, ["zeta_p"], BOUNDS, n_starts=3)
    assert not rep.converged and rep.parameters == {}
    assert any("bound" in d or "threshold" in d for d in rep.diagnostics)


def test_fit_is_deterministic(template):
    curve = synth("power_vs_load", template, noise=0.05)
    a = fit_parameters(curve, template, ["zeta_p"], BOUNDS, n_starts=3)
    b = fit_parameters(curve, template, ["zeta_p"], BOUNDS, n_starts=3)
    assert a.parameters == b.parameters and a.sum_sq_rel_residual == b.sum_sq_rel_residual


def test_bad_free_set(template):
    curve = synth("power_vs_load", template)
    with pytest.raises(ParameterError):
        fit_parameters(curve, template, [], BOUNDS)
    with pytest.raises(ParameterError):
        fit_parameters(curve, template, ["mass"], BOUNDS)


def test_calibration_targets(calibration):
    dev = calibration.device
    assert calibration.f_peak == pytest.approx(344.0, rel=1e-2)
    assert dev.resonator.zeta_p == pytest.approx(0.008, rel=0.25)
    assert calibration.p_max == pytest.approx(50e-6, rel=1e-6)
    assert min(abs(calibration.v_error_rms), abs(calibration.v_error_amplitude)) < 0.2


def test_calibration_deterministic(calibration):
    prototype_calibration.cache_clear()
    again = prototype_calibration()
    assert again.device == calibration.device
    assert again.p_max == calibration.p_max


def test_public_calibration_entry_point(calibration):
    from microgen import calibrate_paper_device

    assert calibrate_paper_device() == calibration.device
