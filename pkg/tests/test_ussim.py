import numpy as np
import pytest
from scipy import stats

from aortaelast import ussim
from aortaelast.errors import RegistrationError
from aortaelast.fem import (BoundarySpec, NodalField, TRACTION_FREE,
                            solve_forward, two_region_modulus)
from aortaelast.meshing import build_mesh, circular_spec
from aortaelast.ussim import (PSFParams, RFGrid, RFImage, RegistrationConfig,
                              ScattererField, deform_scatterers, register_pair,
                              render_rf, sample_scatterers)

LATERAL = (-0.02, 0.02)
DEPTH = (0.08, 0.12)


def test_scatterer_sampling_is_deterministic():
    a = sample_scatterers(LATERAL, DEPTH, seed=3)
    b = sample_scatterers(LATERAL, DEPTH, seed=3)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.amplitudes, b.amplitudes)
    c = sample_scatterers(LATERAL, DEPTH, seed=4)
    assert not np.array_equal(a.positions, c.positions)


def test_scatterer_count_matches_density():
    f = sample_scatterers(LATERAL, DEPTH, seed=0, density=1e7)
    area = (LATERAL[1] - LATERAL[0]) * (DEPTH[1] - DEPTH[0])
    assert len(f.amplitudes) == int(round(1e7 * area))
    assert f.positions[:, 0].min() >= LATERAL[0]
    assert f.positions[:, 1].max() <= DEPTH[1]


def test_single_scatterer_renders_the_point_spread_function():
    psf = PSFParams()
    grid = RFGrid.covering(LATERAL, DEPTH, psf)
    # place one unit scatterer exactly on a grid sample
    i, j = 400, 100
    lat = grid.origin[0] + j * grid.lateral_pitch
    dep = grid.origin[1] + i * grid.axial_pitch
    field = ScattererField(positions=np.array([[lat, dep]]),
                           amplitudes=np.array([1.0]))
    img = render_rf(field, grid, psf).data

    di = np.arange(grid.n_axial) - i
    dj = np.arange(grid.n_lateral) - j
    z = di * grid.axial_pitch
    x = dj * grid.lateral_pitch
    # kernels are truncated at a whole number of samples covering 3 sigma
    n_ax = int(np.ceil(3 * psf.axial_sigma / grid.axial_pitch))
    n_lat = int(np.ceil(3 * psf.lateral_sigma / grid.lateral_pitch))
    k_ax = np.where(np.abs(di) <= n_ax,
                    np.cos(psf.carrier_wavenumber * z)
                    * np.exp(-0.5 * (z / psf.axial_sigma) ** 2), 0.0)
    k_lat = np.where(np.abs(dj) <= n_lat,
                     np.exp(-0.5 * (x / psf.lateral_sigma) ** 2), 0.0)
    expected = k_ax[:, None] * k_lat[None, :]
    assert np.abs(img - expected).max() <= 1e-10 * np.abs(expected).max()


def test_rf_image_is_linear_in_amplitudes():
    psf = PSFParams()
    grid = RFGrid.covering(LATERAL, DEPTH, psf)
    field = sample_scatterers(LATERAL, DEPTH, seed=1, density=1e7)
    img1 = render_rf(field, grid, psf).data
    double = ScattererField(field.positions, 2.0 * field.amplitudes)
    img2 = render_rf(double, grid, psf).data
    np.testing.assert_allclose(img2, 2.0 * img1, rtol=1e-12, atol=1e-12)


def test_speckle_envelope_is_rayleigh_distributed():
    psf = PSFParams()
    grid = RFGrid.covering(LATERAL, DEPTH, psf)
    field = sample_scatterers(LATERAL, DEPTH, seed=7)
    env = render_rf(field, grid, psf).envelope()
    # discard a PSF-wide border, then decimate to roughly independent samples
    bi = int(np.ceil(3 * psf.axial_sigma / grid.axial_pitch))
    bj = int(np.ceil(3 * psf.lateral_sigma / grid.lateral_pitch))
    core = env[bi:-bi:2 * bi, bj:-bj:2 * bj].ravel()
    sigma = np.sqrt(np.mean(core ** 2) / 2.0)
    _, p = stats.kstest(core, stats.rayleigh(scale=sigma).cdf)
    assert p > 0.01


def test_deform_with_zero_field_is_identity():
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    field = sample_scatterers(LATERAL, (0.08, 0.12), seed=2, density=1e7)
    moved = deform_scatterers(field, mesh, np.zeros((mesh.n_nodes, 2)))
    assert np.array_equal(moved.positions, field.positions)


def test_deform_with_uniform_translation():
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    shift = np.array([0.3e-3, -0.2e-3])
    u = np.tile(shift, (mesh.n_nodes, 1))
    # keep all scatterers inside the mesh so every one is advected
    field = sample_scatterers((-0.05, 0.05), (0.05, 0.15), seed=2, density=1e7)
    inside = np.linalg.norm(field.positions - np.asarray(mesh.center), axis=1) > 0.021
    field = ScattererField(field.positions[inside], field.amplitudes[inside])
    moved = deform_scatterers(field, mesh, u)
    np.testing.assert_allclose(moved.positions, field.positions + shift,
                               rtol=0, atol=1e-12)


def test_rf_image_round_trip(tmp_path):
    psf = PSFParams()
    grid = RFGrid.covering(LATERAL, DEPTH, psf)
    field = sample_scatterers(LATERAL, DEPTH, seed=1, density=1e7)
    img = render_rf(field, grid, psf)
    path = tmp_path / "frame.egrid"
    img.save(path)
    back = RFImage.load(path)
    assert np.allclose(back.data, img.data.astype(np.float32), atol=1e-6)
    assert back.grid.axial_pitch == img.grid.axial_pitch
    assert back.psf.center_frequency == img.psf.center_frequency


def test_register_identical_frames_returns_exact_zero():
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    psf = PSFParams()
    grid = RFGrid.covering((-0.04, 0.04), (0.06, 0.14), psf)
    field = sample_scatterers((-0.04, 0.04), (0.06, 0.14), seed=5, density=5e7)
    frame = render_rf(field, grid, psf)
    u, report = register_pair(frame, frame, mesh)
    assert report["identical_frames"]
    assert np.all(u.values == 0.0)


def test_register_mismatched_shapes_raises():
    psf = PSFParams()
    g1 = RFGrid.covering(LATERAL, DEPTH, psf)
    g2 = RFGrid.covering(LATERAL, (0.08, 0.13), psf)
    f1 = RFImage(np.zeros((g1.n_axial, g1.n_lateral)), g1, psf)
    f2 = RFImage(np.zeros((g2.n_axial, g2.n_lateral)), g2, psf)
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    with pytest.raises(RegistrationError):
        register_pair(f1, f2, mesh)


def test_register_recovers_small_translation():
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    psf = PSFParams()
    lateral, depth = (-0.05, 0.05), (0.05, 0.15)
    grid = RFGrid.covering(lateral, depth, psf)
    field = sample_scatterers(lateral, depth, seed=11)
    shift = np.array([0.0, 0.3e-3])
    frame1 = render_rf(field, grid, psf)
    frame2 = render_rf(field.displaced(shift), grid, psf)

    u, report = register_pair(frame1, frame2, mesh)
    # judge accuracy inside the vessel wall, away from the frame border
    vessel = mesh.vessel_node_mask()
    err = u.values[vessel] - shift
    rms = np.sqrt(np.mean(np.sum(err ** 2, axis=1)))
    assert rms <= 0.05e-3


def test_register_recovers_forward_model_deformation():
    mesh = build_mesh(circular_spec(), target_h=4e-3)
    bc = BoundarySpec(top_mode=TRACTION_FREE, bottom_mode=TRACTION_FREE,
                      lumen_pressure=1000.0)
    mu = two_region_modulus(mesh, np.full(mesh.n_nodes, 200e3 / 3), 10e3 / 3)
    u_true = solve_forward(mesh, mu, bc)
    vessel = mesh.vessel_node_mask()
    peak = np.abs(u_true.values[vessel]).max()
    scale = 0.4e-3 / peak
    u_scaled = NodalField(mesh, u_true.values * scale)

    psf = PSFParams()
    lateral, depth = (-0.05, 0.05), (0.05, 0.15)
    grid = RFGrid.covering(lateral, depth, psf)
    field = sample_scatterers(lateral, depth, seed=21)
    frame1 = render_rf(field, grid, psf)
    frame2 = render_rf(deform_scatterers(field, mesh, u_scaled), grid, psf)

    u_est, report = register_pair(frame1, frame2, mesh)
    err = (u_est.values - u_scaled.values)[vessel]
    rms = np.sqrt(np.mean(np.sum(err ** 2, axis=1)))
    assert rms <= 0.10 * 0.4e-3
