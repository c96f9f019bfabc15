from dataclasses import replace

import numpy as np
import pytest

from aortaelast import vesselgen as vg


def test_same_seed_is_bit_identical():
    assert vg.sample_vessel_spec(42) == vg.sample_vessel_spec(42)


def test_base_radius_range_over_seeds():
    for seed in range(1000):
        assert 0.015 <= vg.sample_vessel_spec(seed).base_radius <= 0.025


def test_smooth_flag_fraction_near_half():
    frac = np.mean([vg.sample_vessel_spec(s).smooth for s in range(1000)])
    assert 0.45 <= frac <= 0.55


def test_radius_zero_harmonics_is_constant():
    spec = replace(vg.sample_vessel_spec(0), radius_harmonics=[])
    theta = np.linspace(0, 2 * np.pi, 100)
    assert np.allclose(vg.radius_at(spec, theta), spec.base_radius)


def test_radius_single_cosine_value():
    spec = replace(vg.sample_vessel_spec(1), base_radius=0.02,
                   radius_harmonics=[(0.01, 0.0), (0.0, 0.0), (0.0, 0.0)])
    assert vg.radius_at(spec, 0.0) == pytest.approx(0.03)


def test_radius_bounded_by_harmonic_sum():
    theta = np.linspace(0, 2 * np.pi, 2000)
    for seed in range(100):
        spec = vg.sample_vessel_spec(seed)
        bound = spec.base_radius + sum(a for a, _ in spec.radius_harmonics)
        assert vg.radius_at(spec, theta).max() <= bound + 1e-12


def test_radius_periodic_to_machine_precision():
    theta = np.linspace(0, 2 * np.pi, 50)
    for seed in range(20):
        spec = vg.sample_vessel_spec(seed)
        np.testing.assert_allclose(vg.radius_at(spec, theta),
                                   vg.radius_at(spec, theta + 2 * np.pi),
                                   rtol=0, atol=1e-15)


def test_thickness_zero_harmonics_is_base():
    spec = replace(vg.sample_vessel_spec(3), thickness_harmonics=[])
    theta = np.linspace(0, 2 * np.pi, 64)
    assert np.allclose(vg.thickness_at(spec, theta), 0.005)


def test_thickness_maximum_possible():
    # each term B_i (1 + cos) peaks at 2 B_i
    spec = replace(vg.sample_vessel_spec(3),
                   thickness_harmonics=[(0.005, 0.0), (0.005, 0.0)])
    theta = np.linspace(0, 2 * np.pi, 100000)
    h = vg.thickness_at(spec, theta)
    assert h.max() <= 0.025 + 1e-12
    assert h.max() == pytest.approx(0.025, rel=1e-3)


def test_thickness_never_below_base():
    theta = np.linspace(0, 2 * np.pi, 2000)
    for seed in range(100):
        spec = vg.sample_vessel_spec(seed)
        assert vg.thickness_at(spec, theta).min() >= 0.005 - 1e-12


def test_constant_fallback_modulus_midpoints():
    spec = replace(vg.sample_vessel_spec(5),
                   modulus_harmonics_1=[(0.0, 0.0)],
                   modulus_harmonics_2=[(0.0, 0.0)], smooth=False)
    theta = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    values = vg.modulus_profile(spec).at(theta)
    in_sector = ((theta - spec.sector_start) % (2 * np.pi)) < spec.sector_width
    assert np.allclose(values[in_sector], 1500.0)
    assert np.allclose(values[~in_sector], 5125.0)


def test_modulus_range_over_seeds():
    theta = np.linspace(0, 2 * np.pi, 1440, endpoint=False)
    for seed in range(100):
        values = vg.modulus_profile(vg.sample_vessel_spec(seed)).at(theta)
        assert values.min() >= 250.0 - 1e-9
        assert values.max() <= 10000.0 + 1e-9


def test_smoothing_reduces_total_variation():
    theta = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    checked = 0
    for seed in range(200):
        spec = vg.sample_vessel_spec(seed)
        v_r = vg.modulus_profile(replace(spec, smooth=False)).at(theta)
        v_s = vg.modulus_profile(replace(spec, smooth=True)).at(theta)
        tv_r = np.abs(np.diff(np.r_[v_r, v_r[0]])).sum()
        tv_s = np.abs(np.diff(np.r_[v_s, v_s[0]])).sum()
        if tv_r > 1e-9:
            assert tv_s < tv_r
            checked += 1
        if checked >= 50:
            break
    assert checked >= 50


def test_min_lumen_radius_respected():
    theta = np.linspace(0, 2 * np.pi, 4000)
    for seed in range(200):
        spec = vg.sample_vessel_spec(seed)
        assert vg.radius_at(spec, theta).min() >= vg.MIN_LUMEN_RADIUS - 1e-12


def test_spec_json_round_trip():
    spec = vg.sample_vessel_spec(17)
    assert vg.VesselSpec.from_json(spec.to_json()) == spec
