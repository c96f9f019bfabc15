"""Point evaluation of nodal fields via triangle location + barycentric weights."""

from __future__ import annotations

import logging

import numpy as np
from matplotlib.tri import Triangulation

from .meshing import Mesh

log = logging.getLogger(__name__)


class MeshInterpolator:
    """Locates query points in (a region of) a mesh and interpolates linearly.

    Quadrilaterals are split along a diagonal, so interpolation is
    piecewise linear on the split triangles.
    """

    def __init__(self, mesh: Mesh, region: int | None = None):
        self.mesh = mesh
        tris, parent = mesh.as_triangles()
        if region is not None:
            keep = mesh.region[parent] == region
            tris, parent = tris[keep], parent[keep]
        self.tris = tris
        self.parent = parent
        self._triang = Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], tris)
        self._finder = self._triang.get_trifinder()

    def locate(self, points):
        """(tri_index, barycentric weights); tri_index -1 for misses."""
        pts = np.asarray(points, dtype=float)
        t = self._finder(pts[:, 0], pts[:, 1])
        found = t >= 0
        bary = np.zeros((pts.shape[0], 3))
        if np.any(found):
            tri_nodes = self.tris[t[found]]
            p = self.mesh.nodes[tri_nodes]          # (m, 3, 2)
            v0 = p[:, 1] - p[:, 0]
            v1 = p[:, 2] - p[:, 0]
            d = pts[found] - p[:, 0]
            det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
            w1 = (d[:, 0] * v1[:, 1] - d[:, 1] * v1[:, 0]) / det
            w2 = (v0[:, 0] * d[:, 1] - v0[:, 1] * d[:, 0]) / det
            bary[found, 0] = 1.0 - w1 - w2
            bary[found, 1] = w1
            bary[found, 2] = w2
        return t, bary

    def interpolate(self, values, points, fill=0.0, nearest_fallback=False):
        """Evaluate a nodal field at points; misses get `fill` or nearest node."""
        values = np.asarray(values, dtype=float)
        pts = np.asarray(points, dtype=float)
        t, bary = self.locate(pts)
        found = t >= 0
        out_shape = (pts.shape[0],) + values.shape[1:]
        out = np.full(out_shape, fill, dtype=float)
        if np.any(found):
            tri_nodes = self.tris[t[found]]
            vals = values[tri_nodes]                # (m, 3, ...)
            w = bary[found]
            out[found] = np.einsum("mk,mk...->m...", w, vals)
        if nearest_fallback and np.any(~found):
            miss = np.flatnonzero(~found)
            log.debug("%d points outside mesh carried by nearest node", miss.size)
            region_nodes = np.unique(self.tris)
            d = pts[miss, None, :] - self.mesh.nodes[None, region_nodes, :]
            nearest = region_nodes[np.argmin(np.einsum("mnx,mnx->mn", d, d), axis=1)]
            out[miss] = values[nearest]
        return out, found
