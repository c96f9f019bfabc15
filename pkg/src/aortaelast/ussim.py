"""Synthetic ultrasound RF imaging and regularized displacement estimation.

A linear-array pulse-echo image is modeled as a field of sub-resolution
point scatterers convolved with a separable point-spread function: a
Gaussian-windowed cosine along depth (pulse-echo carrier) and a Gaussian
lateral beam profile.  Two frames rendered from the same scatterers,
displaced by a known deformation field, form a registration pair.

Registration estimates nodal displacements on a finite-element mesh by
minimizing a smoothed-L1 (Charbonnier) norm of the envelope differences
plus a smoothed-L1 penalty on the divergence of the associated stress-like
tensor
A = kappa (div u) I + grad u + grad u^T, solved coarse-to-fine over an
envelope pyramid with L-BFGS-B.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
import scipy.optimize
import scipy.signal
import scipy.sparse as sp

from .egrid import read_egrid, write_egrid
from .errors import RegistrationError
from .fem import NodalField
from .interp import MeshInterpolator
from .meshing import Mesh
from .vesselgen import stream

log = logging.getLogger(__name__)

SOUND_SPEED = 1540.0               # m/s


@dataclass
class PSFParams:
    center_frequency: float = 5e6      # Hz
    n_cycles: float = 2.0              # pulse length in carrier cycles
    lateral_fwhm: float = 1.2e-3       # m
    axial_pitch: float = 0.05e-3       # m per RF sample
    lateral_pitch: float = 0.2e-3      # m per scan line

    @property
    def carrier_wavenumber(self):
        """Pulse-echo spatial carrier: a scatterer at depth z returns at 2z/c."""
        return 4.0 * np.pi * self.center_frequency / SOUND_SPEED

    @property
    def axial_sigma(self):
        """Envelope std dev in depth for an n-cycle Gaussian-windowed pulse."""
        fwhm_t = self.n_cycles / self.center_frequency
        return (SOUND_SPEED / 2.0) * fwhm_t / (2.0 * np.sqrt(2.0 * np.log(2.0)))

    @property
    def lateral_sigma(self):
        return self.lateral_fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass
class RFGrid:
    """Sampling geometry of one RF frame (rows = depth, cols = lateral)."""

    origin: tuple            # (lateral, depth) of sample [0, 0]
    n_axial: int
    n_lateral: int
    axial_pitch: float
    lateral_pitch: float

    @classmethod
    def covering(cls, lateral_extent, depth_extent, psf: PSFParams):
        """RF grid spanning a rectangle [lat0, lat1] x [dep0, dep1]."""
        lat0, lat1 = lateral_extent
        dep0, dep1 = depth_extent
        n_ax = int(np.ceil((dep1 - dep0) / psf.axial_pitch)) + 1
        n_lat = int(np.ceil((lat1 - lat0) / psf.lateral_pitch)) + 1
        return cls(origin=(lat0, dep0), n_axial=n_ax, n_lateral=n_lat,
                   axial_pitch=psf.axial_pitch, lateral_pitch=psf.lateral_pitch)

    def pixel_positions(self):
        """(n_axial*n_lateral, 2) sample coordinates, row-major."""
        lat = self.origin[0] + np.arange(self.n_lateral) * self.lateral_pitch
        dep = self.origin[1] + np.arange(self.n_axial) * self.axial_pitch
        L, D = np.meshgrid(lat, dep)
        return np.stack([L.ravel(), D.ravel()], axis=1)


@dataclass
class ScattererField:
    positions: np.ndarray      # (n, 2): lateral, depth in m
    amplitudes: np.ndarray     # (n,)

    def displaced(self, offsets):
        return ScattererField(self.positions + offsets, self.amplitudes)


@dataclass
class RFImage:
    data: np.ndarray           # (n_axial, n_lateral)
    grid: RFGrid
    psf: PSFParams

    def envelope(self):
        """Magnitude of the axial analytic signal (demodulated speckle)."""
        return np.abs(scipy.signal.hilbert(self.data, axis=0))

    def save(self, path):
        meta = {
            "kind": "rf_frame",
            "origin_m": list(self.grid.origin),
            "axial_pitch_m": self.grid.axial_pitch,
            "lateral_pitch_m": self.grid.lateral_pitch,
            "center_frequency_hz": self.psf.center_frequency,
            "n_cycles": self.psf.n_cycles,
            "lateral_fwhm_m": self.psf.lateral_fwhm,
        }
        write_egrid(path, {"rf": self.data}, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = read_egrid(path)
        rf = arrays["rf"]
        grid = RFGrid(origin=tuple(meta["origin_m"]), n_axial=rf.shape[0],
                      n_lateral=rf.shape[1], axial_pitch=meta["axial_pitch_m"],
                      lateral_pitch=meta["lateral_pitch_m"])
        psf = PSFParams(center_frequency=meta["center_frequency_hz"],
                        n_cycles=meta["n_cycles"],
                        lateral_fwhm=meta["lateral_fwhm_m"],
                        axial_pitch=meta["axial_pitch_m"],
                        lateral_pitch=meta["lateral_pitch_m"])
        return cls(data=rf, grid=grid, psf=psf)


def sample_scatterers(lateral_extent, depth_extent, seed,
                      density=2e8) -> ScattererField:
    """Uniform random scatterers over a rectangle.

    The default density (per m^2) puts ~10 scatterers in one resolution
    cell (~0.3 mm x 1.2 mm ~ 3.6e-7 m^2) for fully developed speckle.
    """
    rng = stream(seed, 0x5CA77E12)
    lat0, lat1 = lateral_extent
    dep0, dep1 = depth_extent
    area = (lat1 - lat0) * (dep1 - dep0)
    n = int(round(density * area))
    pos = np.empty((n, 2))
    pos[:, 0] = rng.uniform(lat0, lat1, n)
    pos[:, 1] = rng.uniform(dep0, dep1, n)
    amp = rng.standard_normal(n)
    return ScattererField(positions=pos, amplitudes=amp)


def render_rf(scatterers: ScattererField, grid: RFGrid,
              psf: PSFParams | None = None) -> RFImage:
    """Bin scatterer amplitudes onto the RF grid and convolve with the PSF."""
    psf = psf or PSFParams()
    img = np.zeros((grid.n_axial, grid.n_lateral))
    # Bilinear deposit so sub-sample motion changes the image smoothly.
    fi = (scatterers.positions[:, 1] - grid.origin[1]) / grid.axial_pitch
    fj = (scatterers.positions[:, 0] - grid.origin[0]) / grid.lateral_pitch
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    wi = fi - i0
    wj = fj - j0
    for di, dj, w in ((0, 0, (1 - wi) * (1 - wj)), (1, 0, wi * (1 - wj)),
                      (0, 1, (1 - wi) * wj), (1, 1, wi * wj)):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < grid.n_axial) & (jj >= 0) & (jj < grid.n_lateral)
        np.add.at(img, (ii[ok], jj[ok]), scatterers.amplitudes[ok] * w[ok])

    # Separable PSF: Gaussian-windowed cosine in depth, Gaussian laterally.
    n_ax = int(np.ceil(3 * psf.axial_sigma / grid.axial_pitch))
    z = np.arange(-n_ax, n_ax + 1) * grid.axial_pitch
    k_ax = np.cos(psf.carrier_wavenumber * z) * np.exp(-0.5 * (z / psf.axial_sigma) ** 2)
    n_lat = int(np.ceil(3 * psf.lateral_sigma / grid.lateral_pitch))
    x = np.arange(-n_lat, n_lat + 1) * grid.lateral_pitch
    k_lat = np.exp(-0.5 * (x / psf.lateral_sigma) ** 2)
    img = scipy.signal.fftconvolve(img, k_ax[:, None], mode="same")
    img = scipy.signal.fftconvolve(img, k_lat[None, :], mode="same")
    return RFImage(data=img, grid=grid, psf=psf)


def deform_scatterers(scatterers: ScattererField, mesh: Mesh, u,
                      interpolator: MeshInterpolator | None = None) -> ScattererField:
    """Advect scatterers by a nodal displacement field.

    Scatterers outside the mesh keep their position (zero displacement);
    their count is logged since a dense rim of static scatterers next to
    moving tissue would corrupt the registration there.
    """
    values = u.values if isinstance(u, NodalField) else np.asarray(u)
    if values.ndim == 1:
        values = values.reshape(-1, 2)
    interp = interpolator or MeshInterpolator(mesh)
    offsets, found = interp.interpolate(values, scatterers.positions, fill=0.0)
    n_out = int((~found).sum())
    if n_out:
        log.info("deform_scatterers: %d/%d scatterers outside the mesh kept static",
                 n_out, len(found))
    return scatterers.displaced(offsets)


@dataclass
class RegistrationConfig:
    alpha: float | None = None        # None: auto from the coarse level
    pyramid: tuple = (4, 2, 1)        # envelope downsampling factors
    epsilon: float = 1e-8             # smoothed-L1 constant (penalty)
    delta: float = 0.03               # Charbonnier constant (data residual,
                                      # in units of the peak-normalized envelope)
    nu: float = 0.45                  # sets kappa in the penalty tensor
    max_iterations: int = 1000        # L-BFGS-B cap per level
    gtol: float = 1e-10


def _downsample(img, f):
    if f == 1:
        return img
    h, w = img.shape
    img = img[:h - h % f, :w - w % f]
    return img.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def _interp_matrix(mesh, interp, points):
    """Sparse pixel -> node barycentric interpolation (rows sum to 1)."""
    tri_idx, bary = interp.locate(points)
    ok = tri_idx >= 0
    rows = np.repeat(np.arange(len(points))[ok], 3)
    cols = interp.tris[tri_idx[ok]].ravel()
    vals = bary[ok].ravel()
    S = sp.coo_matrix((vals, (rows, cols)),
                      shape=(len(points), mesh.n_nodes)).tocsr()
    return S, ok


def _second_diff(n, pitch):
    """1D second-difference operator, zero rows at the boundary."""
    e = np.ones(n)
    D = sp.diags([e[1:], -2 * e, e[1:]], [-1, 0, 1], format="lil") / pitch ** 2
    D[0, :] = 0
    D[-1, :] = 0
    return D.tocsr()


def _first_diff(n, pitch):
    """1D central-difference operator, zero rows at the boundary."""
    e = np.ones(n - 1)
    D = sp.diags([-e, e], [-1, 1], format="lil") / (2 * pitch)
    D[0, :] = 0
    D[-1, :] = 0
    return D.tocsr()


def _penalty_operator(shape, pitches, kappa):
    """Sparse operator taking stacked pixel displacements (ux, uy) to the
    two components of div(kappa tr(eps) I + 2 eps) on the pixel grid."""
    h, w = shape
    pa, pl = pitches                      # axial (rows), lateral (cols)
    Iy = sp.identity(h, format="csr")
    Ix = sp.identity(w, format="csr")
    Dxx = sp.kron(Iy, _second_diff(w, pl), format="csr")
    Dyy = sp.kron(_second_diff(h, pa), Ix, format="csr")
    Dxy = sp.kron(_first_diff(h, pa), _first_diff(w, pl), format="csr")
    L11 = (kappa + 2.0) * Dxx + Dyy
    L12 = (kappa + 1.0) * Dxy
    L22 = Dxx + (kappa + 2.0) * Dyy
    return sp.bmat([[L11, L12], [L12, L22]], format="csr")


def _bilinear(img, fi, fj):
    """Sample img at fractional indices; returns (value, d/dfi, d/dfj)."""
    h, w = img.shape
    in_i = (fi >= 0.0) & (fi <= h - 1.0)
    in_j = (fj >= 0.0) & (fj <= w - 1.0)
    fi = np.clip(fi, 0.0, h - 1.0 - 1e-9)
    fj = np.clip(fj, 0.0, w - 1.0 - 1e-9)
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    wi = fi - i0
    wj = fj - j0
    v00 = img[i0, j0]
    v10 = img[i0 + 1, j0]
    v01 = img[i0, j0 + 1]
    v11 = img[i0 + 1, j0 + 1]
    val = (v00 * (1 - wi) * (1 - wj) + v10 * wi * (1 - wj)
           + v01 * (1 - wi) * wj + v11 * wi * wj)
    # Outside samples hold the clamped edge value: zero slope there.
    dfi = np.where(in_i, (v10 - v00) * (1 - wj) + (v11 - v01) * wj, 0.0)
    dfj = np.where(in_j, (v01 - v00) * (1 - wi) + (v11 - v10) * wi, 0.0)
    return val, dfi, dfj


class _Level:
    """One pyramid level: downsampled envelopes + interpolation operators."""

    def __init__(self, env1, env2, factor, rf_grid, mesh, interp, cfg):
        self.env1 = _downsample(env1, factor)
        self.env2 = _downsample(env2, factor)
        scale = max(self.env1.max(), self.env2.max())
        if scale > 0:
            self.env1 = self.env1 / scale
            self.env2 = self.env2 / scale
        self.pa = rf_grid.axial_pitch * factor
        self.pl = rf_grid.lateral_pitch * factor
        h, w = self.env1.shape
        lat = rf_grid.origin[0] + (np.arange(w) * factor + (factor - 1) / 2.0) * rf_grid.lateral_pitch
        dep = rf_grid.origin[1] + (np.arange(h) * factor + (factor - 1) / 2.0) * rf_grid.axial_pitch
        L, D = np.meshgrid(lat, dep)
        points = np.stack([L.ravel(), D.ravel()], axis=1)
        self.base_fi = (points[:, 1] - rf_grid.origin[1]) / rf_grid.axial_pitch / factor
        self.base_fj = (points[:, 0] - rf_grid.origin[0]) / rf_grid.lateral_pitch / factor
        S, inside = _interp_matrix(mesh, interp, points)
        self.S = S
        self.inside = inside
        self.n_px = h * w
        L_op = _penalty_operator((h, w), (self.pa, self.pl),
                                 2.0 * cfg.nu / (1.0 - 2.0 * cfg.nu))
        # Penalize only pixels whose full difference stencil lies inside the
        # mesh, so the lumen hole does not masquerade as a displacement jump.
        valid = ndi.binary_erosion(inside.reshape(h, w),
                                   structure=np.ones((3, 3))).ravel()
        self.L = sp.diags(np.concatenate([valid, valid]).astype(float)) @ L_op
        self.eps = cfg.epsilon
        self.delta = cfg.delta

    def split(self, u_flat):
        u = u_flat.reshape(-1, 2)
        px = self.S @ u[:, 0]
        py = self.S @ u[:, 1]
        return px, py

    def data_term(self, u_flat):
        px, py = self.split(u_flat)
        # fractional indices on this level's grid
        fi = self.base_fi + py / self.pa
        fj = self.base_fj + px / self.pl
        warped, dfi, dfj = _bilinear(self.env2, fi, fj)
        r = np.where(self.inside, warped - self.env1.ravel(), 0.0)
        # Charbonnier residual: pixels near material that the mesh does not
        # track (e.g. static speckle bordering moving tissue) produce large
        # residuals no displacement can fix; a quadratic data term lets a few
        # such pixels drag their neighboring nodes far off, a smoothed-L1
        # term caps their pull at unit weight.
        mag = np.sqrt(r ** 2 + self.delta ** 2)
        E = float((mag - self.delta).sum())
        w = r / mag
        gpx = w * dfj / self.pl
        gpy = w * dfi / self.pa
        gx = self.S.T @ gpx
        gy = self.S.T @ gpy
        return E, np.stack([gx, gy], axis=1).ravel()

    def penalty(self, u_flat):
        px, py = self.split(u_flat)
        stacked = np.concatenate([px, py])
        r = self.L @ stacked
        rx, ry = r[:self.n_px], r[self.n_px:]
        mag = np.sqrt(rx ** 2 + ry ** 2 + self.eps ** 2)
        R = float(mag.sum())
        gr = np.concatenate([rx / mag, ry / mag])
        g = self.L.T @ gr
        gx = self.S.T @ g[:self.n_px]
        gy = self.S.T @ g[self.n_px:]
        return R, np.stack([gx, gy], axis=1).ravel()


def register_pair(frame1: RFImage, frame2: RFImage, mesh: Mesh,
                  cfg: RegistrationConfig | None = None):
    """Estimate the nodal displacement carrying frame1 onto frame2.

    Returns (NodalField, report dict).  The estimate u satisfies
    env2(x + u(x)) ~ env1(x) on the RF sampling grid.
    """
    cfg = cfg or RegistrationConfig()
    if frame1.data.shape != frame2.data.shape:
        raise RegistrationError("frames have different shapes",
                                diagnostics={"shape1": frame1.data.shape,
                                             "shape2": frame2.data.shape})
    env1 = frame1.envelope()
    env2 = frame2.envelope()
    if np.array_equal(frame1.data, frame2.data):
        # Identical frames: u = 0 is the exact global minimum.
        zeros = np.zeros((mesh.n_nodes, 2))
        return NodalField(mesh, zeros), {"levels": [], "identical_frames": True,
                                         "alpha": cfg.alpha or 0.0}

    interp = MeshInterpolator(mesh)
    u = np.zeros(2 * mesh.n_nodes)
    alpha = cfg.alpha
    report = {"levels": [], "identical_frames": False}
    for factor in cfg.pyramid:
        level = _Level(env1, env2, factor, frame1.grid, mesh, interp, cfg)
        if alpha is None:
            # Probe: fit the coarsest level unregularized, then weight the
            # penalty at 10% of the achieved data term.
            probe = scipy.optimize.minimize(
                level.data_term, u, jac=True, method="L-BFGS-B",
                options={"maxiter": cfg.max_iterations, "gtol": cfg.gtol})
            E0, _ = level.data_term(probe.x)
            R0, _ = level.penalty(probe.x)
            alpha = 0.1 * E0 / R0 if R0 > 0 else 0.0
            u = probe.x

        def objective(x, level=level, alpha=alpha):
            E, gE = level.data_term(x)
            R, gR = level.penalty(x)
            return E + alpha * R, gE + alpha * gR

        result = scipy.optimize.minimize(
            objective, u, jac=True, method="L-BFGS-B",
            options={"maxiter": cfg.max_iterations, "gtol": cfg.gtol})
        if not np.all(np.isfinite(result.x)):
            raise RegistrationError("non-finite displacement estimate",
                                    diagnostics={"level": factor})
        u = result.x
        report["levels"].append({
            "factor": factor, "objective": float(result.fun),
            "n_iterations": int(result.nit), "converged": bool(result.success),
            "message": str(result.message),
        })
    report["alpha"] = alpha
    return NodalField(mesh, u.reshape(-1, 2)), report
