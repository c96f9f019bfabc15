import numpy as np
import pytest

from aortaelast import vesselgen as vg
from aortaelast.errors import MeshingError
from aortaelast.meshing import (DEPTH_MAX, LATERAL_HALF, REGION_BACKGROUND,
                                REGION_VESSEL, build_mesh, circular_spec)


@pytest.fixture(scope="module")
def circle_mesh():
    return build_mesh(circular_spec(), target_h=2e-3)


def test_all_elements_positive_area(circle_mesh):
    assert circle_mesh.element_areas().min() > 0


def test_quad_elements_positive_area():
    mesh = build_mesh(circular_spec(), target_h=2e-3, element_kind="quad4")
    assert mesh.element_areas().min() > 0
    assert mesh.elements.shape[1] == 4


def test_lumen_loop_length_matches_circumference(circle_mesh):
    edges = circle_mesh.lumen_edges
    p = circle_mesh.nodes[edges]
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1).sum()
    assert length == pytest.approx(2 * np.pi * 0.02, rel=0.01)


def test_quad_mesh_mean_element_area_at_reference_density():
    mesh = build_mesh(circular_spec(), target_h=1.6e-3, element_kind="quad4")
    mean_mm2 = mesh.element_areas()[mesh.region == REGION_VESSEL].mean() * 1e6
    assert 2.7 - 1.5 <= mean_mm2 <= 2.7 + 1.5


def test_vessel_area_converges_under_refinement():
    areas = []
    for h in (4e-3, 2e-3):
        mesh = build_mesh(circular_spec(), target_h=h)
        areas.append(mesh.element_areas()[mesh.region == REGION_VESSEL].sum())
    exact = np.pi * (0.025 ** 2 - 0.02 ** 2)
    # refining 2x changes the polygonal area estimate by < 0.5%
    assert abs(areas[1] - areas[0]) / exact < 0.005


def test_outer_boundary_on_rectangle(circle_mesh):
    outer = circle_mesh.outer_node_indices()
    p = circle_mesh.nodes[outer]
    on_side = (np.isclose(np.abs(p[:, 0]), LATERAL_HALF)
               | np.isclose(p[:, 1], 0.0) | np.isclose(p[:, 1], DEPTH_MAX))
    assert on_side.all()


def test_total_area_fills_rectangle_minus_lumen(circle_mesh):
    total = circle_mesh.element_areas().sum()
    rect = 2 * LATERAL_HALF * DEPTH_MAX
    lumen = np.pi * 0.02 ** 2
    assert total == pytest.approx(rect - lumen, rel=1e-3)


def test_region_partition(circle_mesh):
    assert set(np.unique(circle_mesh.region)) == {REGION_BACKGROUND,
                                                  REGION_VESSEL}


def test_lumen_nodes_on_spec_radius():
    spec = vg.sample_vessel_spec(9)
    mesh = build_mesh(spec, target_h=2.5e-3)
    lumen_nodes = np.unique(mesh.lumen_edges)
    p = mesh.nodes[lumen_nodes] - np.asarray(mesh.center)
    r = np.linalg.norm(p, axis=1)
    theta = np.arctan2(p[:, 1], p[:, 0])
    np.testing.assert_allclose(r, vg.radius_at(spec, theta), rtol=1e-9)


def test_triangle_split_of_quads_covers_same_area():
    mesh = build_mesh(circular_spec(), target_h=3e-3, element_kind="quad4")
    tris, parent = mesh.as_triangles()
    p = mesh.nodes[tris]
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    tri_area = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    assert tri_area.min() > 0
    per_quad = np.zeros(mesh.n_elements)
    np.add.at(per_quad, parent, tri_area)
    np.testing.assert_allclose(per_quad, mesh.element_areas(), rtol=1e-12)


def test_infeasible_geometry_raises():
    spec = circular_spec(base_radius=0.085, thickness=0.02)
    with pytest.raises(MeshingError):
        # wall would extend past the shallow boundary of the domain
        build_mesh(spec, target_h=3e-3, grading=1.0)


def test_mesh_determinism():
    a = build_mesh(vg.sample_vessel_spec(4), target_h=2.5e-3)
    b = build_mesh(vg.sample_vessel_spec(4), target_h=2.5e-3)
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.elements, b.elements)
