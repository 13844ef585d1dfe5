import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microgen.device import device_damping, natural_frequency
from microgen.harmonic import (
    backbone,
    branch_amplitude,
    branch_peak,
    frequency_response,
    jump_frequencies,
    peak_response,
    phase_lag,
    response_amplitudes,
)

from conftest import simple_device


def amplitude_residual(device, y0, f, z):
    r = device.resonator
    w = 2 * math.pi * f
    c = device_damping(device).c_total
    lhs = ((r.k_lin - r.mass * w * w + 0.75 * r.k_cub * z * z) ** 2 + (c * w) ** 2) * z * z
    rhs = (r.mass * y0 * w * w) ** 2
    return (lhs - rhs) / rhs


@settings(max_examples=500, deadline=None)
@given(
    k_cub=st.floats(0.0, 1e11),
    y0=st.floats(1e-8, 1e-5),
    f_ratio=st.floats(0.5, 1.5),
    zeta=st.floats(1e-3, 0.1),
)
def test_roots_satisfy_amplitude_equation(k_cub, y0, f_ratio, zeta):
    d = simple_device(f_n=300.0, zeta_p=zeta, k_cub=k_cub)
    f = 300.0 * f_ratio
    roots = response_amplitudes(d, y0, f)
    assert len(roots) in (1, 3)
    for r in roots:
        assert r.amplitude > 0
        assert abs(amplitude_residual(d, y0, f, r.amplitude)) < 1e-8
    if len(roots) == 3:
        assert [r.stable for r in roots] == [True, False, True]
        assert roots[0].amplitude < roots[1].amplitude < roots[2].amplitude


def test_linear_root_is_closed_form():
    d = simple_device(f_n=300.0, zeta_p=0.01)
    for f in (200.0, 300.0, 420.0):
        r = f / 300.0
        exact = 1e-6 * r * r / math.sqrt((1 - r * r) ** 2 + (2 * 0.01 * r) ** 2)
        (root,) = response_amplitudes(d, 1e-6, f)
        assert root.amplitude == pytest.approx(exact, rel=1e-12)


def test_zero_excitation():
    d = simple_device(k_cub=4e9)
    assert response_amplitudes(d, 0.0, 300.0)[0].amplitude == 0.0
    assert peak_response(d, 0.0) == (natural_frequency(d.resonator), 0.0)


@settings(max_examples=15, deadline=None)
@given(k_cub=st.floats(0.0, 2e10), y0=st.floats(1e-7, 6e-6))
def test_peak_matches_dense_grid(k_cub, y0):
    d = simple_device(f_n=300.0, zeta_p=0.01, k_cub=k_cub)
    f_peak, z_peak = peak_response(d, y0)
    grid = np.linspace(f_peak - 5, f_peak + 5, 20001)
    upper = frequency_response(d, y0, grid).upper()
    assert z_peak == pytest.approx(upper.max(), rel=1e-6)
    assert f_peak == pytest.approx(grid[np.argmax(upper)], abs=2e-3)


def test_peak_lies_near_backbone():
    d = simple_device(f_n=300.0, zeta_p=0.005, k_cub=4e9)
    f_peak, z_peak = peak_response(d, 4e-6)
    assert f_peak == pytest.approx(float(backbone(d, z_peak)), rel=1e-3)


def test_unbounded_peak_raises():
    d = simple_device(f_n=300.0, zeta_p=1e-4, k_cub=1e11)
    with pytest.raises(ValueError):
        peak_response(d, 1e-5)


def test_linear_has_no_jumps():
    j = jump_frequencies(simple_device(), 5e-6)
    assert not j.present and "linear" in j.diagnostic


def test_weak_drive_single_valued():
    j = jump_frequencies(simple_device(k_cub=4e9), 0.5e-6)
    assert not j.present


def test_jump_frequencies_bracket_three_root_band():
    d = simple_device(f_n=300.0, k_cub=4e9)
    j = jump_frequencies(d, 5e-6)
    assert j.present and j.f_jump_down < j.f_jump_up
    inside = np.linspace(j.f_jump_down + 0.01, j.f_jump_up - 0.01, 25)
    outside = [j.f_jump_down - 0.05, j.f_jump_up + 0.05]
    assert all(len(response_amplitudes(d, 5e-6, f)) == 3 for f in inside)
    assert all(len(response_amplitudes(d, 5e-6, f)) == 1 for f in outside)


def test_branches_and_branch_peaks():
    d = simple_device(f_n=300.0, k_cub=4e9)
    j = jump_frequencies(d, 5e-6)
    f_mid = 0.5 * (j.f_jump_down + j.f_jump_up)
    assert branch_amplitude(d, 5e-6, f_mid, "up") > branch_amplitude(d, 5e-6, f_mid, "down")
    f_up, z_up = branch_peak(d, 5e-6, "up")
    f_dn, z_dn = branch_peak(d, 5e-6, "down")
    assert f_up > f_dn and z_up > z_dn
    with pytest.raises(ValueError):
        branch_amplitude(d, 5e-6, f_mid, "sideways")


def test_backbone_linear_limit():
    d = simple_device(f_n=300.0, k_cub=4e9)
    assert backbone(d, 0.0) == pytest.approx(300.0)
    assert np.all(np.diff(backbone(d, np.linspace(0, 5e-4, 11))) > 0)


def test_phase_lag_quadrature_at_linear_resonance():
    d = simple_device(f_n=300.0)
    assert phase_lag(d, 1e-5, 300.0) == pytest.approx(math.pi / 2)
