"""Plane-strain, nearly incompressible linear-elastic FE machinery.

The constitutive law is written in terms of the shear modulus G and
Poisson ratio nu:  stress = G * [kappa (div u) I + (grad u + grad u^T)]
with kappa = 2 nu / (1 - 2 nu), i.e. lambda = kappa * G.  The dilatation
term is integrated with a one-point (reduced) rule to avoid mesh locking;
everything else uses full quadrature (3-point on triangles, 3x3 Gauss on
quadrilaterals).  Boundary integrals use 3-point 1D Gauss on element
edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, SolveError
from .meshing import Mesh, REGION_VESSEL

FIXED_LATERAL = "fixed_lateral"
TRACTION_FREE = "traction_free"

_GL3 = np.sqrt(3.0 / 5.0)
_GAUSS_1D = (np.array([-_GL3, 0.0, _GL3]), np.array([5.0, 8.0, 5.0]) / 9.0)


@dataclass
class NodalField:
    """Scalar or 2-vector field on mesh nodes."""

    mesh: Mesh
    values: np.ndarray    # (n,) or (n, 2)

    def __post_init__(self):
        n = self.mesh.n_nodes
        if self.values.shape[0] != n:
            raise ValueError(f"field has {self.values.shape[0]} values, mesh has {n} nodes")

    def flat(self):
        """Interleaved dof vector (lateral0, depth0, lateral1, ...)."""
        return np.asarray(self.values, dtype=float).reshape(-1)


@dataclass
class BoundarySpec:
    top_mode: str = FIXED_LATERAL
    bottom_mode: str = TRACTION_FREE
    lumen_pressure: float = 4000.0   # Pa


def _tri3_quadrature(nodes, elements):
    """Shape values, physical gradients and weights for the 3pt + 1pt rules."""
    p = nodes[elements]                       # (ne, 3, 2)
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    det = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    area = 0.5 * det
    # Constant gradients of the barycentric shape functions.
    dN = np.empty((elements.shape[0], 3, 2))
    dN[:, 1, 0] = v2[:, 1] / det
    dN[:, 1, 1] = -v2[:, 0] / det
    dN[:, 2, 0] = -v1[:, 1] / det
    dN[:, 2, 1] = v1[:, 0] / det
    dN[:, 0] = -dN[:, 1] - dN[:, 2]

    pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    N_full = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
    ne = elements.shape[0]
    full = (
        np.broadcast_to(N_full, (ne, 3, 3)).copy(),
        np.broadcast_to(dN[:, None], (ne, 3, 3, 2)).copy(),
        np.outer(area, np.full(3, 1 / 3)),
    )
    N_red = np.full((ne, 1, 3), 1 / 3)
    red = (N_red, dN[:, None].copy(), area[:, None].copy())
    return full, red


def _quad4_quadrature(nodes, elements):
    p = nodes[elements]                       # (ne, 4, 2)
    ne = elements.shape[0]

    def rule(xis, etas, wts):
        ng = len(xis)
        N = np.empty((ng, 4))
        dNr = np.empty((ng, 4, 2))   # derivatives in reference coords
        for g, (xi, eta) in enumerate(zip(xis, etas)):
            N[g] = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                                    (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
            dNr[g, :, 0] = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            dNr[g, :, 1] = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
        J = np.einsum("gkr,ekx->egrx", dNr, p)           # (ne, ng, 2, 2)
        detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        invJ = np.empty_like(J)
        invJ[..., 0, 0] = J[..., 1, 1] / detJ
        invJ[..., 0, 1] = -J[..., 0, 1] / detJ
        invJ[..., 1, 0] = -J[..., 1, 0] / detJ
        invJ[..., 1, 1] = J[..., 0, 0] / detJ
        dN = np.einsum("gkr,egxr->egkx", dNr, invJ)      # physical gradients
        w = detJ * np.asarray(wts)
        return np.broadcast_to(N, (ne, len(xis), 4)).copy(), dN, w

    g1, w1 = _GAUSS_1D
    xis = np.repeat(g1, 3)
    etas = np.tile(g1, 3)
    wts = np.repeat(w1, 3) * np.tile(w1, 3)
    full = rule(xis, etas, wts)
    red = rule([0.0], [0.0], [4.0])
    return full, red


class FemOperator:
    """Precomputed quadrature data and assembly routines for one mesh."""

    def __init__(self, mesh: Mesh, nu: float = 0.45):
        if not (0.0 < nu < 0.5):
            raise AssemblyError(f"Poisson ratio must be in (0, 0.5), got {nu}")
        self.mesh = mesh
        self.nu = nu
        self.kappa = 2.0 * nu / (1.0 - 2.0 * nu)
        if mesh.element_kind == "tri3":
            self.full, self.red = _tri3_quadrature(mesh.nodes, mesh.elements)
        else:
            self.full, self.red = _quad4_quadrature(mesh.nodes, mesh.elements)
        if self.full[2].min() <= 0 or self.red[2].min() <= 0:
            raise AssemblyError("non-positive Jacobian in quadrature data")
        self._index_cache = None

    # -- element dof bookkeeping ------------------------------------------
    def _dof_indices(self):
        if self._index_cache is None:
            el = self.mesh.elements
            k = el.shape[1]
            dofs = np.empty((el.shape[0], 2 * k), dtype=np.int64)
            dofs[:, 0::2] = 2 * el
            dofs[:, 1::2] = 2 * el + 1
            rows = np.repeat(dofs, 2 * k, axis=1).ravel()
            cols = np.tile(dofs, (1, 2 * k)).ravel()
            self._index_cache = (dofs, rows, cols)
        return self._index_cache

    def _b_matrices(self, dN):
        """Voigt strain-displacement matrices, (ne, ng, 3, 2k)."""
        ne, ng, k, _ = dN.shape
        B = np.zeros((ne, ng, 3, 2 * k))
        B[:, :, 0, 0::2] = dN[..., 0]
        B[:, :, 1, 1::2] = dN[..., 1]
        B[:, :, 2, 0::2] = dN[..., 1]
        B[:, :, 2, 1::2] = dN[..., 0]
        return B

    # -- stiffness ---------------------------------------------------------
    def element_modulus(self, G):
        """Per-element nodal modulus (ne, k) from nodal or element-nodal input.

        A plain nodal array is gathered per element.  Passing an (ne, k)
        array directly allows discontinuous modulus across the
        vessel/background interface (see :func:`two_region_modulus`).
        """
        G = np.asarray(G, dtype=float)
        if G.ndim == 1:
            return G[self.mesh.elements]
        if G.shape != self.mesh.elements.shape:
            raise AssemblyError(f"modulus shape {G.shape} matches neither nodes "
                                f"nor elements of the mesh")
        return G

    def assemble_stiffness(self, G) -> sp.csr_matrix:
        """K(G) with selective reduced integration of the dilatation term."""
        mesh = self.mesh
        Ge = self.element_modulus(G)                      # (ne, k)
        if np.any(Ge <= 0):
            raise AssemblyError("modulus must be positive everywhere")

        C_dev = np.array([[2.0, 0, 0], [0, 2.0, 0], [0, 0, 1.0]])
        C_dil = self.kappa * np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 0.0]])

        Ke = None
        for (N, dN, w), C in ((self.full, C_dev), (self.red, C_dil)):
            Gg = np.einsum("egk,ek->eg", N, Ge)
            B = self._b_matrices(dN)
            contrib = np.einsum("eg,egai,ab,egbj->eij", w * Gg, B, C, B, optimize=True)
            Ke = contrib if Ke is None else Ke + contrib

        _, rows, cols = self._dof_indices()
        n = 2 * mesh.n_nodes
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        return K

    def modulus_stiffness_gradient(self, lam: np.ndarray, u: np.ndarray,
                                   element_mask=None) -> np.ndarray:
        """Per-node d(lam^T K(G) u)/dG; K is linear in the nodal modulus.

        With ``element_mask`` only the selected elements contribute, which
        matches a modulus field whose remaining elements do not depend on
        the nodal values (two-region assembly).
        """
        mesh = self.mesh
        dofs, _, _ = self._dof_indices()
        le = lam[dofs]                                    # (ne, 2k)
        ue = u[dofs]
        C_dev = np.array([[2.0, 0, 0], [0, 2.0, 0], [0, 0, 1.0]])
        C_dil = self.kappa * np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 0.0]])
        grad = np.zeros(mesh.n_nodes)
        sel = slice(None) if element_mask is None else element_mask
        for (N, dN, w), C in ((self.full, C_dev), (self.red, C_dil)):
            B = self._b_matrices(dN)[sel]
            s = np.einsum("egai,ei,ab,egbj,ej->eg", B, le[sel], C, B, ue[sel],
                          optimize=True)
            contrib = np.einsum("eg,egk->ek", (w[sel]) * s, N[sel])
            np.add.at(grad, mesh.elements[sel].ravel(), contrib.ravel())
        return grad

    # -- mass / boundary operators ------------------------------------------
    def displacement_mass_matrix(self) -> sp.csr_matrix:
        """D: integrates the squared nodal displacement mismatch over the domain."""
        mesh = self.mesh
        N, _, w = self.full
        Me = np.einsum("eg,egi,egj->eij", w, N, N)        # scalar mass per element
        k = mesh.elements.shape[1]
        De = np.zeros((mesh.n_elements, 2 * k, 2 * k))
        De[:, 0::2, 0::2] = Me
        De[:, 1::2, 1::2] = Me
        _, rows, cols = self._dof_indices()
        n = 2 * mesh.n_nodes
        return sp.coo_matrix((De.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def _edge_mass(self, edges):
        """Boundary mass matrix over a set of straight edges (3pt 1D Gauss)."""
        mesh = self.mesh
        p0 = mesh.nodes[edges[:, 0]]
        p1 = mesh.nodes[edges[:, 1]]
        L = np.linalg.norm(p1 - p0, axis=1)
        g1, w1 = _GAUSS_1D
        N = np.stack([(1 - g1) / 2, (1 + g1) / 2], axis=1)   # (3, 2)
        Me = np.einsum("g,gi,gj->ij", w1, N, N)              # 2x2, unit length
        rows, cols, vals = [], [], []
        for comp in (0, 1):
            for a in range(2):
                for b in range(2):
                    rows.append(2 * edges[:, a] + comp)
                    cols.append(2 * edges[:, b] + comp)
                    vals.append(0.5 * L * Me[a, b])
        n = 2 * mesh.n_nodes
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()

    def outer_boundary_matrix(self) -> sp.csr_matrix:
        """F_o: traction / spring integration operator on the outer boundary."""
        return self._edge_mass(self.mesh.outer_edges)

    def lumen_pressure_load(self) -> np.ndarray:
        """f_P for unit pressure: integral of w . n over the lumen loop.

        Normals point from the lumen into the wall, so a positive pressure
        inflates the vessel.
        """
        mesh = self.mesh
        f = np.zeros(2 * mesh.n_nodes)
        p0 = mesh.nodes[mesh.lumen_edges[:, 0]]
        p1 = mesh.nodes[mesh.lumen_edges[:, 1]]
        e = p1 - p0
        # CCW lumen loop: rotating the edge vector by -90 deg points away
        # from the lumen interior (into the wall); |n_raw| = edge length.
        n_raw = np.stack([e[:, 1], -e[:, 0]], axis=1)
        for a in (0, 1):
            idx = mesh.lumen_edges[:, a]
            np.add.at(f, 2 * idx, 0.5 * n_raw[:, 0])
            np.add.at(f, 2 * idx + 1, 0.5 * n_raw[:, 1])
        return f


def two_region_modulus(mesh: Mesh, vessel_nodal: np.ndarray,
                       background_value: float) -> np.ndarray:
    """Element-nodal modulus with a sharp vessel/background interface.

    Vessel elements interpolate the nodal values; background elements are
    held at ``background_value`` even at shared interface nodes, so the
    soft surround is not stiffened by interpolation across the interface.
    """
    Ge = np.asarray(vessel_nodal, dtype=float)[mesh.elements].copy()
    Ge[mesh.region != REGION_VESSEL] = background_value
    return Ge


@dataclass
class AssembledSystem:
    """Stiffness + boundary operators for one (mesh, modulus, nu) triple."""

    operator: FemOperator
    K: sp.csr_matrix
    f_P: np.ndarray
    F_o: sp.csr_matrix


def assemble(mesh: Mesh, modulus, nu: float = 0.45) -> AssembledSystem:
    """Stiffness and boundary operators; `modulus` is a NodalField or array."""
    op = FemOperator(mesh, nu)
    values = modulus.values if isinstance(modulus, NodalField) else modulus
    K = op.assemble_stiffness(values)
    return AssembledSystem(operator=op, K=K, f_P=op.lumen_pressure_load(),
                           F_o=op.outer_boundary_matrix())


def constrained_dofs(mesh: Mesh, bc: BoundarySpec) -> np.ndarray:
    """Dof indices fixed to zero under the forward boundary conditions."""
    # both bottom-center components are pinned: with a traction-free
    # bottom edge, pinning only the depth component leaves an
    # infinitesimal rigid rotation about the top-center node
    # unconstrained (the singular mode carries no load for symmetric
    # configurations but makes the system numerically singular)
    fixed = {2 * mesh.top_center, 2 * mesh.top_center + 1,
             2 * mesh.bottom_center, 2 * mesh.bottom_center + 1}
    if bc.top_mode == FIXED_LATERAL:
        fixed.update(2 * i for i in mesh.top_edge)
    if bc.bottom_mode == FIXED_LATERAL:
        fixed.update(2 * i for i in mesh.bottom_edge)
    return np.array(sorted(fixed), dtype=np.int64)


def solve_forward(mesh: Mesh, modulus, bc: BoundarySpec,
                  nu: float = 0.45) -> NodalField:
    """Displacement under lumen pressure with the mixed boundary conditions."""
    sys = assemble(mesh, modulus, nu)
    f = bc.lumen_pressure * sys.f_P

    n = 2 * mesh.n_nodes
    fixed = constrained_dofs(mesh, bc)
    free = np.setdiff1d(np.arange(n), fixed)

    K_ff = sys.K[free][:, free].tocsc()
    f_f = f[free]
    diag = K_ff.diagonal()
    if np.any(diag <= 0):
        raise SolveError("non-positive stiffness diagonal (singular system?)")
    # symmetric Jacobi equilibration: the modulus contrast between the
    # vessel wall and the very soft background otherwise leaves the
    # factorization several digits short of the residual gate below
    d = np.sqrt(diag)
    D = sp.diags(1.0 / d)
    try:
        lu = spla.splu((D @ K_ff @ D).tocsc())
    except RuntimeError as exc:
        raise SolveError(f"forward system factorization failed: {exc}") from exc

    def scaled_solve(b):
        return lu.solve(b / d) / d

    u_f = scaled_solve(f_f)
    if not np.all(np.isfinite(u_f)):
        raise SolveError("forward solve produced non-finite values (singular system?)")
    # iterative refinement, keeping the best iterate; residuals are
    # measured in extended precision because the double-precision
    # residual is noise-limited on these ill-conditioned systems
    K_ext = K_ff.astype(np.longdouble)
    f_ext = f_f.astype(np.longdouble)
    f_norm = max(float(np.linalg.norm(f_ext)), 1e-300)

    def ext_residual(x):
        return f_ext - K_ext @ np.asarray(x, dtype=np.longdouble)

    r = ext_residual(u_f)
    res = float(np.linalg.norm(r)) / f_norm
    for _ in range(3):
        if res <= 1e-13:
            break
        trial = u_f + scaled_solve(np.asarray(r, dtype=float))
        trial_r = ext_residual(trial)
        trial_res = float(np.linalg.norm(trial_r)) / f_norm
        if trial_res >= res:
            break
        u_f, r, res = trial, trial_r, trial_res
    if res > 1e-10:
        raise SolveError(f"forward solve residual {res:.2e} exceeds 1e-10")

    u = np.zeros(n)
    u[free] = u_f
    return NodalField(mesh=mesh, values=u.reshape(-1, 2))


def element_strains(u: NodalField):
    """Centroid infinitesimal strain per element: (exx, eyy, exy)."""
    op = FemOperator(u.mesh, nu=0.45)
    _, dN, _ = op.red
    ue = u.values[u.mesh.elements]                  # (ne, k, 2)
    grad = np.einsum("ekx,eky->exy", dN[:, 0], ue)  # grad[e, i, j] = du_j/dx_i
    exx = grad[:, 0, 0]
    eyy = grad[:, 1, 1]
    exy = 0.5 * (grad[:, 0, 1] + grad[:, 1, 0])
    return exx, eyy, exy


def max_principal_strain_per_element(u: NodalField) -> np.ndarray:
    exx, eyy, exy = element_strains(u)
    c = 0.5 * (exx + eyy)
    r = np.sqrt((0.5 * (exx - eyy)) ** 2 + exy ** 2)
    return c + r


def principal_strain_field(u: NodalField) -> NodalField:
    """Largest principal strain per element, area-averaged to nodes."""
    mesh = u.mesh
    eP = max_principal_strain_per_element(u)
    areas = mesh.element_areas()
    num = np.zeros(mesh.n_nodes)
    den = np.zeros(mesh.n_nodes)
    k = mesh.elements.shape[1]
    np.add.at(num, mesh.elements.ravel(), np.repeat(eP * areas, k))
    np.add.at(den, mesh.elements.ravel(), np.repeat(areas, k))
    den[den == 0] = 1.0
    return NodalField(mesh=mesh, values=num / den)


# -- field / mesh serialization ---------------------------------------------

def save_field(field: NodalField, path):
    values = np.asarray(field.values, dtype="<f8")
    header = {"version": 1, "n_nodes": int(values.shape[0]),
              "components": 1 if values.ndim == 1 else int(values.shape[1])}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(values.tobytes())


def load_field(path, mesh: Mesh) -> NodalField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    comps = header["components"]
    values = raw.reshape(header["n_nodes"], comps) if comps > 1 else raw.copy()
    return NodalField(mesh=mesh, values=values)


def save_mesh(mesh: Mesh, path):
    header = {
        "version": 1,
        "element_kind": mesh.element_kind,
        "n_nodes": int(mesh.n_nodes),
        "elements": mesh.elements.tolist(),
        "region": mesh.region.tolist(),
        "lumen_edges": mesh.lumen_edges.tolist(),
        "outer_edges": mesh.outer_edges.tolist(),
        "top_center": int(mesh.top_center),
        "bottom_center": int(mesh.bottom_center),
        "top_edge": mesh.top_edge.tolist(),
        "bottom_edge": mesh.bottom_edge.tolist(),
        "center": list(mesh.center),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.asarray(mesh.nodes, dtype="<f8").tobytes())


def load_mesh(path) -> Mesh:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        nodes = np.frombuffer(fh.read(), dtype="<f8").reshape(header["n_nodes"], 2).copy()
    return Mesh(
        nodes=nodes,
        elements=np.asarray(header["elements"], dtype=np.int64),
        element_kind=header["element_kind"],
        region=np.asarray(header["region"], dtype=np.uint8),
        lumen_edges=np.asarray(header["lumen_edges"], dtype=np.int64),
        outer_edges=np.asarray(header["outer_edges"], dtype=np.int64),
        top_center=header["top_center"],
        bottom_center=header["bottom_center"],
        top_edge=np.asarray(header["top_edge"], dtype=np.int64),
        bottom_edge=np.asarray(header["bottom_edge"], dtype=np.int64),
        center=tuple(header["center"]),
    )
