"""Paired displacement/modulus image dataset generation.

Pipeline per sample: draw a vessel, solve the plane-strain forward
problem under a random lumen pressure, divide the displacements by that
pressure, interpolate everything onto a 128x128 grid centered on the
vessel, apply a joint integer-pixel translation, and persist as EGRID.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from . import egrid
from .errors import DatasetError, MeshingError, NormalizationError
from .fem import BoundarySpec, NodalField, solve_forward, two_region_modulus
from .fem import FIXED_LATERAL, TRACTION_FREE
from .interp import MeshInterpolator
from .meshing import Mesh, REGION_VESSEL, build_mesh, circular_spec
from .vesselgen import modulus_profile, sample_vessel_spec, stream

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
DEFAULT_TARGET_H = 2.5e-3       # m, generation meshes
MAX_SHIFT = 10                  # px, translation augmentation
PHANTOM_PRESSURE = 5330.0       # Pa, pulse pressure of 40 mmHg
PHANTOM_MU_LOW = 200e3 / 3.0    # Pa; Young's 200 kPa at nu=0.5
PHANTOM_BACKGROUND = 10e3 / 3.0  # Pa; Young's 10 kPa at nu=0.5


@dataclass
class GridSpec:
    width: int = 128
    height: int = 128
    pixel_pitch: float = 0.86e-3          # m
    origin: tuple = (0.0, 0.0)            # (lateral, depth) of pixel (0,0) center

    def pixel_centers(self):
        """(h*w, 2) pixel center coordinates, row-major."""
        j = np.arange(self.width)
        i = np.arange(self.height)
        lat = self.origin[0] + j * self.pixel_pitch
        dep = self.origin[1] + i * self.pixel_pitch
        LAT, DEP = np.meshgrid(lat, dep)
        return np.stack([LAT.ravel(), DEP.ravel()], axis=1)

    @classmethod
    def centered_on(cls, point, width=128, height=128, pixel_pitch=0.86e-3):
        origin = (point[0] - (width - 1) / 2.0 * pixel_pitch,
                  point[1] - (height - 1) / 2.0 * pixel_pitch)
        return cls(width=width, height=height, pixel_pitch=pixel_pitch, origin=origin)


@dataclass
class GridSample:
    """Co-registered 128x128 images plus pressure metadata."""

    u_x_norm: np.ndarray     # m/Pa
    u_y_norm: np.ndarray     # m/Pa
    modulus: np.ndarray      # Pa
    mask: np.ndarray         # binary
    pressure: float          # Pa
    spec_seed: int
    provenance: str          # generated | comsol_style | registered
    grid: GridSpec

    def arrays(self):
        return {"ux": self.u_x_norm, "uy": self.u_y_norm,
                "mu": self.modulus, "mask": self.mask.astype(np.float32)}

    def save(self, path):
        meta = {"P_pa": float(self.pressure), "seed": int(self.spec_seed),
                "provenance": self.provenance,
                "pixel_pitch_m": self.grid.pixel_pitch,
                "origin_m": list(self.grid.origin)}
        egrid.write_egrid(path, self.arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = egrid.read_egrid(path)
        h, w = arrays["mu"].shape
        grid = GridSpec(width=w, height=h,
                        pixel_pitch=meta.get("pixel_pitch_m", 0.86e-3),
                        origin=tuple(meta.get("origin_m", (0.0, 0.0))))
        return cls(u_x_norm=arrays["ux"].astype(float),
                   u_y_norm=arrays["uy"].astype(float),
                   modulus=arrays["mu"].astype(float),
                   mask=arrays["mask"] > 0.5,
                   pressure=meta["P_pa"], spec_seed=meta.get("seed", 0),
                   provenance=meta.get("provenance", "generated"), grid=grid)


def pressure_normalize(u: NodalField, P: float) -> NodalField:
    """Divide both displacement components by the applied pressure."""
    if P <= 0:
        raise NormalizationError(f"pressure must be positive, got {P}")
    return NodalField(mesh=u.mesh, values=u.values / P)


def interp_to_grid(field, mesh: Mesh, grid: GridSpec,
                   interpolator: MeshInterpolator | None = None):
    """Sample a nodal field at pixel centers within vessel elements.

    Pixels whose center falls in no vessel-region element are set to 0.
    Returns (image, mask).
    """
    values = field.values if isinstance(field, NodalField) else np.asarray(field)
    interp = interpolator or MeshInterpolator(mesh, region=REGION_VESSEL)
    out, found = interp.interpolate(values, grid.pixel_centers(), fill=0.0)
    shape = (grid.height, grid.width) + values.shape[1:]
    return out.reshape(shape), found.reshape(grid.height, grid.width)


def _shift_image(img, di, dj):
    """Integer-pixel translation padding with zeros (no wrap-around)."""
    out = np.zeros_like(img)
    h, w = img.shape
    src_i = slice(max(0, -di), min(h, h - di))
    dst_i = slice(max(0, di), min(h, h + di))
    src_j = slice(max(0, -dj), min(w, w - dj))
    dst_j = slice(max(0, dj), min(w, w + dj))
    out[dst_i, dst_j] = img[src_i, src_j]
    return out


def _draw_shift(rng, mask):
    """Joint translation that keeps the whole mask inside the frame."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    h, w = mask.shape
    touches_border = (rows[0] == 0 or rows[-1] == h - 1 or
                      cols[0] == 0 or cols[-1] == w - 1)
    if touches_border:
        return 0, 0   # vessel already fills the frame; shifting would clip
    lo_i, hi_i = -min(MAX_SHIFT, rows[0]), min(MAX_SHIFT, h - 1 - rows[-1])
    lo_j, hi_j = -min(MAX_SHIFT, cols[0]), min(MAX_SHIFT, w - 1 - cols[-1])
    di = int(rng.integers(lo_i, hi_i + 1))
    dj = int(rng.integers(lo_j, hi_j + 1))
    return di, dj


def vessel_modulus_nodal(mesh: Mesh, spec) -> np.ndarray:
    """Nodal shear modulus from the spec's angular profile (vessel nodes)."""
    profile = modulus_profile(spec)
    return profile.at(mesh.node_angles())


def generate_sample(global_seed: int, index: int, grid: GridSpec | None = None,
                    target_h: float = DEFAULT_TARGET_H,
                    augment: bool = True) -> GridSample:
    """One fully deterministic dataset sample for (global_seed, index)."""
    rng = stream(global_seed, index)
    spec_seed = int(rng.integers(0, 2 ** 62))
    pressure = float(rng.uniform(1000.0, 8000.0))
    top_mode = FIXED_LATERAL if rng.uniform() < 0.5 else TRACTION_FREE
    bottom_mode = FIXED_LATERAL if rng.uniform() < 0.5 else TRACTION_FREE

    mesh = None
    for attempt in range(3):
        spec = sample_vessel_spec(spec_seed + attempt)
        try:
            mesh = build_mesh(spec, target_h=target_h, element_kind="tri3")
            break
        except MeshingError as exc:
            log.warning("sample (%d, %d): meshing attempt %d failed: %s",
                        global_seed, index, attempt, exc)
    if mesh is None:
        raise MeshingError("meshing failed after 3 resampling attempts",
                           spec_seed=spec_seed)

    mu_nodal = vessel_modulus_nodal(mesh, spec)
    Ge = two_region_modulus(mesh, mu_nodal, spec.background_modulus)
    bc = BoundarySpec(top_mode=top_mode, bottom_mode=bottom_mode,
                      lumen_pressure=pressure)
    u = solve_forward(mesh, Ge, bc, nu=0.45)
    u_norm = pressure_normalize(u, pressure)

    if grid is None:
        grid = GridSpec.centered_on(mesh.center)
    interp = MeshInterpolator(mesh, region=REGION_VESSEL)
    ug, mask = interp_to_grid(u_norm, mesh, grid, interpolator=interp)
    mu_img, _ = interp_to_grid(mu_nodal, mesh, grid, interpolator=interp)
    ux = np.where(mask, ug[..., 0], 0.0)
    uy = np.where(mask, ug[..., 1], 0.0)
    mu_img = np.where(mask, mu_img, 0.0)

    if augment:
        di, dj = _draw_shift(rng, mask)
        ux, uy = _shift_image(ux, di, dj), _shift_image(uy, di, dj)
        mu_img = _shift_image(mu_img, di, dj)
        mask = _shift_image(mask.astype(np.uint8), di, dj) > 0

    return GridSample(u_x_norm=ux, u_y_norm=uy, modulus=mu_img, mask=mask,
                      pressure=pressure, spec_seed=spec_seed,
                      provenance="generated", grid=grid)


def make_digital_phantom(contrast: float, grid: GridSpec | None = None,
                         target_h: float = 2.0e-3,
                         element_kind: str = "tri3"):
    """Two-sector circular vessel emulating the 3D digital phantom study.

    The image-upper half carries ``contrast`` times the fixed lower-half
    shear modulus of 66.7 kPa, forward-solved at the 5.33 kPa pulse
    pressure.  Returns (GridSample tagged comsol_style, mesh, displacement
    NodalField) so reconstruction methods can reuse the FE fields.
    """
    if contrast <= 0:
        raise ValueError("contrast must be positive")
    # Image rows ascend with depth, so the upper image half is the theta
    # in (pi, 2*pi) half around the vessel center.
    spec = circular_spec(base_radius=0.02, thickness=0.005,
                         sector_start=np.pi, sector_width=np.pi)
    mesh = build_mesh(spec, target_h=target_h, element_kind=element_kind)
    theta = mesh.node_angles()
    upper = (theta - spec.sector_start) % (2.0 * np.pi) < spec.sector_width
    mu_nodal = np.where(upper, PHANTOM_MU_LOW * contrast, PHANTOM_MU_LOW)
    Ge = two_region_modulus(mesh, mu_nodal, PHANTOM_BACKGROUND)
    bc = BoundarySpec(top_mode=FIXED_LATERAL, bottom_mode=TRACTION_FREE,
                      lumen_pressure=PHANTOM_PRESSURE)
    u = solve_forward(mesh, Ge, bc, nu=0.45)
    u_norm = pressure_normalize(u, PHANTOM_PRESSURE)

    if grid is None:
        grid = GridSpec.centered_on(mesh.center)
    interp = MeshInterpolator(mesh, region=REGION_VESSEL)
    ug, mask = interp_to_grid(u_norm, mesh, grid, interpolator=interp)
    mu_img, _ = interp_to_grid(mu_nodal, mesh, grid, interpolator=interp)
    sample = GridSample(
        u_x_norm=np.where(mask, ug[..., 0], 0.0),
        u_y_norm=np.where(mask, ug[..., 1], 0.0),
        modulus=np.where(mask, mu_img, 0.0),
        mask=mask, pressure=PHANTOM_PRESSURE, spec_seed=0,
        provenance="comsol_style", grid=grid)
    return sample, mesh, u


# -- dataset persistence ------------------------------------------------------

def _split_layout(n_train, n_val, n_test):
    layout = {}
    start = 0
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        layout[split] = range(start, start + n)
        start += n
    return layout


def sample_filename(split, index):
    return f"{split}_{index:06d}.egrid"


def _generate_one(args):
    out_dir, global_seed, split, index, grid_kwargs, target_h = args
    path = os.path.join(out_dir, sample_filename(split, index))
    if os.path.exists(path) and egrid.is_valid_egrid(path):
        return path
    sample = generate_sample(global_seed, index, target_h=target_h)
    tmp = path + ".tmp"
    sample.save(tmp)
    os.replace(tmp, path)
    return path


def generate_dataset(global_seed: int, n_train: int, n_val: int, n_test: int,
                     out_path, target_h: float = DEFAULT_TARGET_H,
                     workers: int = 1) -> dict:
    """Write disjoint-seed splits plus a manifest; resumable and idempotent.

    Sample indices are globally unique across splits, so per-sample RNG
    streams (keyed by (global_seed, index)) never collide.
    """
    os.makedirs(out_path, exist_ok=True)
    layout = _split_layout(n_train, n_val, n_test)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "global_seed": int(global_seed),
        "target_h": target_h,
        "grid": asdict(GridSpec()),
        "counts": {"train": n_train, "val": n_val, "test": n_test},
        "files": {split: [sample_filename(split, i) for i in idx]
                  for split, idx in layout.items()},
    }
    manifest_path = os.path.join(out_path, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            existing = json.load(fh)
        for key in ("format_version", "global_seed", "counts"):
            if existing.get(key) != manifest[key]:
                raise DatasetError(f"resume mismatch on manifest field {key!r}: "
                                   f"{existing.get(key)} != {manifest[key]}")

    tasks = [(out_path, global_seed, split, i, None, target_h)
             for split, idx in layout.items() for i in idx]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_generate_one, tasks, chunksize=4))
    else:
        for t in tasks:
            _generate_one(t)

    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
