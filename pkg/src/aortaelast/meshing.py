"""Body-fitted meshing of the vessel-in-tissue domain.

The domain is the rectangle lateral in [-0.12, 0.12] m, depth in
[0, 0.20] m, with the vessel annulus as a tagged subregion and the lumen
as a hole.  Because the vessel contour is a polar function around the
vessel center, the whole domain is meshed with a polar-structured grid:
rings of nodes at the lumen wall, through the wall thickness, and graded
outward until the final ring traces the rectangle exactly.  The angular
grid includes the exact directions of the four rectangle corners and of
the top/bottom edge midpoints, so the outer ring contains those points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshingError
from .vesselgen import VesselSpec, radius_at, thickness_at

LATERAL_HALF = 0.12    # m
DEPTH_MAX = 0.20       # m
DOMAIN_CENTER = (0.0, 0.10)

REGION_BACKGROUND = 0
REGION_VESSEL = 1

_SNAP_TOL = 1e-9


@dataclass
class Mesh:
    """Conforming two-region mesh with lumen hole and tagged boundaries."""

    nodes: np.ndarray          # (n, 2) lateral, depth [m]
    elements: np.ndarray       # (ne, 3) tri3 or (ne, 4) quad4, CCW
    element_kind: str          # 'tri3' | 'quad4'
    region: np.ndarray         # (ne,) REGION_* per element
    lumen_edges: np.ndarray    # (nl, 2) node pairs, CCW loop around the lumen
    outer_edges: np.ndarray    # (no, 2) node pairs, CCW loop around the domain
    top_center: int
    bottom_center: int
    top_edge: np.ndarray       # node indices on depth = DEPTH_MAX
    bottom_edge: np.ndarray    # node indices on depth = 0
    center: tuple              # vessel center (lateral, depth)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_areas(self):
        """Signed polygon area per element (positive for valid elements)."""
        p = self.nodes[self.elements]   # (ne, k, 2)
        x, y = p[..., 0], p[..., 1]
        xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yn - xn * y, axis=1)

    def vessel_node_mask(self):
        """Boolean mask of nodes attached to at least one vessel element."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.elements[self.region == REGION_VESSEL].ravel()] = True
        return mask

    def outer_node_indices(self):
        """Node indices on the outer boundary loop, in CCW order."""
        return self.outer_edges[:, 0].copy()

    def node_angles(self):
        """Angle of each node around the vessel center, in [0, 2pi)."""
        d = self.nodes - np.asarray(self.center)
        return np.arctan2(d[:, 1], d[:, 0]) % (2.0 * np.pi)

    def as_triangles(self):
        """(tris, parent_element) view; quads are split along a diagonal."""
        if self.element_kind == "tri3":
            return self.elements, np.arange(self.n_elements)
        q = self.elements
        tris = np.concatenate([q[:, [0, 1, 2]], q[:, [0, 2, 3]]], axis=0)
        parent = np.concatenate([np.arange(self.n_elements)] * 2)
        return tris, parent


def _ray_to_rectangle(cx, cy, dx, dy):
    """Distance from (cx, cy) along (dx, dy) to the domain rectangle."""
    t = np.inf
    if dx > 0:
        t = min(t, (LATERAL_HALF - cx) / dx)
    elif dx < 0:
        t = min(t, (-LATERAL_HALF - cx) / dx)
    if dy > 0:
        t = min(t, (DEPTH_MAX - cy) / dy)
    elif dy < 0:
        t = min(t, (0.0 - cy) / dy)
    return t


def _angular_grid(n_theta, cx, cy):
    """Uniform angles with the corner and edge-midpoint directions spliced in."""
    theta = np.arange(n_theta) * 2.0 * np.pi / n_theta
    targets = [
        (LATERAL_HALF, DEPTH_MAX), (-LATERAL_HALF, DEPTH_MAX),
        (-LATERAL_HALF, 0.0), (LATERAL_HALF, 0.0),
        (0.0, DEPTH_MAX), (0.0, 0.0),
    ]
    for tx, ty in targets:
        ang = np.arctan2(ty - cy, tx - cx) % (2.0 * np.pi)
        j = int(np.argmin(np.abs(((theta - ang) + np.pi) % (2.0 * np.pi) - np.pi)))
        theta[j] = ang
    if np.any(np.diff(theta) <= 0):
        raise MeshingError("angular grid too coarse to separate corner directions")
    return theta


def _geometric_fractions(gap, h0, grading):
    """Cumulative fractions of a geometric cell progression filling `gap`."""
    sizes = [h0]
    while sum(sizes) < gap:
        sizes.append(sizes[-1] * grading)
    cum = np.cumsum(sizes)
    return np.concatenate([[0.0], cum / cum[-1]])[1:]   # exclude 0, include 1


def build_mesh(spec: VesselSpec, target_h: float, element_kind: str = "tri3",
               grading: float = 1.3, n_theta: int | None = None) -> Mesh:
    """Mesh the rectangle domain with a body-fitted vessel annulus.

    Element size near the vessel is bounded by ``target_h``; background
    cells grow geometrically by ``grading`` toward the rectangle.
    """
    if target_h <= 0:
        raise ValueError("target_h must be positive")
    if element_kind not in ("tri3", "quad4"):
        raise ValueError(f"unknown element kind {element_kind!r}")

    cx = DOMAIN_CENTER[0] + spec.center_offset[0]
    cy = DOMAIN_CENTER[1] + spec.center_offset[1]

    probe = np.linspace(0.0, 2.0 * np.pi, 1440, endpoint=False)
    a_probe = radius_at(spec, probe)
    h_probe = thickness_at(spec, probe)
    if a_probe.min() <= 0 or h_probe.min() <= 0:
        raise MeshingError("degenerate vessel contour", spec_seed=spec.rng_seed)
    b_max = (a_probe + h_probe).max()

    if n_theta is None:
        n_theta = max(48, int(np.ceil(2.0 * np.pi * b_max / target_h)))
    theta = _angular_grid(n_theta, cx, cy)

    a = radius_at(spec, theta)
    h = thickness_at(spec, theta)
    b = a + h
    ray = np.array([_ray_to_rectangle(cx, cy, np.cos(t), np.sin(t)) for t in theta])
    if np.any(b >= ray):
        raise MeshingError("vessel extends beyond the domain rectangle",
                           spec_seed=spec.rng_seed)

    n_lay = max(2, int(np.ceil(h.mean() / target_h)))
    bg_fracs = _geometric_fractions((ray - b).mean(), target_h, grading)

    rings = [a + (m / n_lay) * h for m in range(n_lay + 1)]
    rings += [b + s * (ray - b) for s in bg_fracs]
    n_rings = len(rings)          # node rings; cells = n_rings - 1

    cos_t, sin_t = np.cos(theta), np.sin(theta)
    nodes = np.empty((n_rings * n_theta, 2))
    for m, r in enumerate(rings):
        nodes[m * n_theta:(m + 1) * n_theta, 0] = cx + r * cos_t
        nodes[m * n_theta:(m + 1) * n_theta, 1] = cy + r * sin_t

    # Snap the outer ring onto the rectangle exactly.
    outer = slice((n_rings - 1) * n_theta, n_rings * n_theta)
    for col, vals in ((0, (-LATERAL_HALF, LATERAL_HALF)), (1, (0.0, DEPTH_MAX))):
        for v in vals:
            c = nodes[outer, col]
            c[np.abs(c - v) < 1e-6] = v
            nodes[outer, col] = c

    quads = []
    region = []
    for m in range(n_rings - 1):
        lo, hi = m * n_theta, (m + 1) * n_theta
        j = np.arange(n_theta)
        j1 = (j + 1) % n_theta
        quads.append(np.stack([lo + j, hi + j, hi + j1, lo + j1], axis=1))
        region.append(np.full(n_theta,
                              REGION_VESSEL if m < n_lay else REGION_BACKGROUND,
                              dtype=np.uint8))
    quads = np.concatenate(quads)
    region = np.concatenate(region)

    if element_kind == "quad4":
        elements = quads
    else:
        elements = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]], axis=1)
        elements = elements.reshape(-1, 3)
        region = np.repeat(region, 2)

    j = np.arange(n_theta)
    j1 = (j + 1) % n_theta
    lumen_edges = np.stack([j, j1], axis=1)
    off = (n_rings - 1) * n_theta
    outer_edges = np.stack([off + j, off + j1], axis=1)

    mesh = Mesh(
        nodes=nodes, elements=elements, element_kind=element_kind,
        region=region, lumen_edges=lumen_edges, outer_edges=outer_edges,
        top_center=0, bottom_center=0,
        top_edge=np.empty(0, dtype=int), bottom_edge=np.empty(0, dtype=int),
        center=(cx, cy),
    )

    areas = mesh.element_areas()
    if areas.min() <= 0:
        raise MeshingError(f"inverted element (min area {areas.min():.3e})",
                           spec_seed=spec.rng_seed)

    outer_idx = np.arange(off, off + n_theta)
    on_top = outer_idx[nodes[outer_idx, 1] == DEPTH_MAX]
    on_bottom = outer_idx[nodes[outer_idx, 1] == 0.0]
    mesh.top_edge = on_top
    mesh.bottom_edge = on_bottom
    mesh.top_center = int(on_top[np.argmin(np.abs(nodes[on_top, 0]))])
    mesh.bottom_center = int(on_bottom[np.argmin(np.abs(nodes[on_bottom, 0]))])
    return mesh


def circular_spec(base_radius=0.02, thickness=0.005, center=(0.0, 0.0),
                  sector_start=np.pi, sector_width=np.pi, smooth=False,
                  seed=0) -> VesselSpec:
    """Vessel spec for an exact circular annulus (all harmonics zero)."""
    return VesselSpec(
        base_radius=base_radius,
        radius_harmonics=[(0.0, 0.0)] * 3,
        base_thickness=thickness,
        thickness_harmonics=[(0.0, 0.0)] * 2,
        center_offset=center,
        modulus_base=1000.0,
        modulus_harmonics_1=[(0.0, 0.0)] * 3,
        modulus_harmonics_2=[(0.0, 0.0)] * 3,
        sector_start=sector_start,
        sector_width=sector_width,
        smooth=smooth,
        rng_seed=seed,
    )
