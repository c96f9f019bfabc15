"""Random vessel geometries and angular shear-modulus profiles.

A vessel is described by a base lumen radius and wall thickness, each
perturbed by a small number of cosine harmonics, plus a piecewise angular
shear-modulus profile built from two normalized harmonic functions joined
over a random sector.  All randomness goes through counter-based Philox
streams so that a (seed) pair reproduces the same vessel on any platform.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter1d

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

# Fixed physical parameters of the generator.
BASE_THICKNESS = 0.005          # m
MODULUS_BASE = 1000.0           # Pa
BACKGROUND_MODULUS = 5.0        # Pa
MU1_RANGE = (1000.0, 2000.0)    # Pa, sector profile
MU2_RANGE = (250.0, 10000.0)    # Pa, remainder profile
DEFAULT_SMOOTHING_WIDTH = TWO_PI / 36.0   # 10 degrees
MIN_LUMEN_RADIUS = 0.005        # m, reject geometries thinner than this
# Added to the i-th harmonic phase draw so perturbations never align.
PHASE_OFFSET = TWO_PI / 7.0
DEFAULT_N_THETA = 720


def stream(*key):
    """Counter-based RNG stream keyed by up to two 64-bit integers."""
    key = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class VesselSpec:
    """All random parameters defining one vessel's geometry and modulus."""

    base_radius: float                        # m
    radius_harmonics: list                    # 3 (amplitude m, phase rad) pairs
    base_thickness: float                     # m
    thickness_harmonics: list                 # 2 (amplitude m, phase rad) pairs
    center_offset: tuple                      # (lateral, depth) m
    modulus_base: float                       # Pa
    modulus_harmonics_1: list                 # 3 (amplitude Pa, phase rad) pairs
    modulus_harmonics_2: list                 # 3 (amplitude Pa, phase rad) pairs
    sector_start: float                       # rad
    sector_width: float                       # rad
    smooth: bool
    smoothing_width: float = DEFAULT_SMOOTHING_WIDTH
    background_modulus: float = BACKGROUND_MODULUS
    rng_seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "VesselSpec":
        d = json.loads(text)
        d["radius_harmonics"] = [tuple(p) for p in d["radius_harmonics"]]
        d["thickness_harmonics"] = [tuple(p) for p in d["thickness_harmonics"]]
        d["modulus_harmonics_1"] = [tuple(p) for p in d["modulus_harmonics_1"]]
        d["modulus_harmonics_2"] = [tuple(p) for p in d["modulus_harmonics_2"]]
        d["center_offset"] = tuple(d["center_offset"])
        return cls(**d)


@dataclass
class ModulusProfile:
    """Shear modulus sampled on a uniform angular grid (periodic)."""

    theta: np.ndarray   # rad, uniform on [0, 2pi)
    mu: np.ndarray      # Pa

    def at(self, theta):
        """Evaluate by periodic linear interpolation."""
        th = np.asarray(theta, dtype=float) % TWO_PI
        n = self.theta.size
        dt = TWO_PI / n
        idx = np.floor(th / dt).astype(int) % n
        frac = th / dt - np.floor(th / dt)
        return self.mu[idx] * (1.0 - frac) + self.mu[(idx + 1) % n] * frac


def _harmonic_sum(theta, pairs):
    th = np.asarray(theta, dtype=float)
    out = np.zeros_like(th)
    for i, (amp, phase) in enumerate(pairs, start=1):
        out = out + amp * np.cos(i * th + phase)
    return out


def radius_at(spec: VesselSpec, theta):
    """Inner lumen radius r(theta), m.  Periodic in 2*pi."""
    return spec.base_radius + _harmonic_sum(theta, spec.radius_harmonics)


def thickness_at(spec: VesselSpec, theta):
    """Wall thickness h(theta), m.  Each harmonic term is >= 0."""
    th = np.asarray(theta, dtype=float)
    out = np.full_like(th, spec.base_thickness, dtype=float)
    for i, (amp, phase) in enumerate(spec.thickness_harmonics, start=1):
        out = out + amp * (1.0 + np.cos(i * th + phase))
    return out


def _minmax_normalize(values, lo, hi):
    vmin, vmax = values.min(), values.max()
    if vmax - vmin <= 0.0:
        # Constant input: 0/0 in the rescale, fall back to the range midpoint.
        return np.full_like(values, 0.5 * (lo + hi))
    return lo + (values - vmin) * (hi - lo) / (vmax - vmin)


def modulus_profile(spec: VesselSpec, n_theta: int = DEFAULT_N_THETA) -> ModulusProfile:
    """Piecewise-sector angular modulus profile, optionally smoothed.

    Two harmonic modulus functions are evaluated on the angular grid and
    min-max normalized: the sector function to [1, 2] kPa and the
    remainder to [0.25, 10] kPa.  The sector [theta0, theta0+theta1)
    carries the first; if ``spec.smooth`` the composite is convolved
    angularly (periodic wrap) with a Gaussian of width
    ``spec.smoothing_width``, truncated at 3 sigma.
    """
    if n_theta < 64:
        raise ValueError(f"n_theta must be >= 64, got {n_theta}")
    theta = np.arange(n_theta) * TWO_PI / n_theta

    def raw(pairs):
        out = np.full(n_theta, spec.modulus_base)
        for i, (amp, phase) in enumerate(pairs, start=1):
            out = out + amp * (1.0 + np.cos(i * theta + phase))
        return out

    mu1 = _minmax_normalize(raw(spec.modulus_harmonics_1), *MU1_RANGE)
    mu2 = _minmax_normalize(raw(spec.modulus_harmonics_2), *MU2_RANGE)

    in_sector = ((theta - spec.sector_start) % TWO_PI) < spec.sector_width
    mu = np.where(in_sector, mu1, mu2)

    if spec.smooth:
        sigma_samples = spec.smoothing_width / (TWO_PI / n_theta)
        mu = gaussian_filter1d(mu, sigma_samples, mode="wrap", truncate=3.0)

    return ModulusProfile(theta=theta, mu=mu)


def _draw_spec(rng, seed) -> VesselSpec:
    def pairs(n, amp_lo, amp_hi):
        out = []
        for i in range(1, n + 1):
            amp = rng.uniform(amp_lo, amp_hi)
            phase = (rng.uniform(0.0, TWO_PI) + i * PHASE_OFFSET) % TWO_PI
            out.append((amp, phase))
        return out

    base_radius = rng.uniform(0.015, 0.025)
    radius_harmonics = pairs(3, 0.0, 0.01)
    thickness_harmonics = pairs(2, 0.0, 0.005)
    dx = rng.uniform(-0.005, 0.005)
    dy = rng.uniform(-0.001, 0.001)
    mh1 = pairs(3, 750.0, 1500.0)
    mh2 = pairs(3, 750.0, 1500.0)
    sector_start = rng.uniform(0.0, TWO_PI)
    sector_width = rng.uniform(TWO_PI / 3.0, np.pi)
    smooth = bool(rng.uniform() < 0.5)
    return VesselSpec(
        base_radius=base_radius,
        radius_harmonics=radius_harmonics,
        base_thickness=BASE_THICKNESS,
        thickness_harmonics=thickness_harmonics,
        center_offset=(dx, dy),
        modulus_base=MODULUS_BASE,
        modulus_harmonics_1=mh1,
        modulus_harmonics_2=mh2,
        sector_start=sector_start,
        sector_width=sector_width,
        smooth=smooth,
        rng_seed=int(seed),
    )


def sample_vessel_spec(seed: int) -> VesselSpec:
    """Draw a random vessel spec, deterministically for a given seed.

    Degenerate geometries (minimum lumen radius below 5 mm) are rejected
    and resampled from a derived stream; a polar radius function cannot
    self-intersect, so the radius floor is the only geometric check.
    """
    theta = np.arange(DEFAULT_N_THETA) * TWO_PI / DEFAULT_N_THETA
    rejections = 0
    for attempt in range(1000):
        spec = _draw_spec(stream(seed, attempt), seed)
        if radius_at(spec, theta).min() >= MIN_LUMEN_RADIUS:
            if rejections:
                log.debug("seed %d: %d degenerate draws rejected", seed, rejections)
            return spec
        rejections += 1
    raise RuntimeError(f"could not draw a non-degenerate vessel for seed {seed}")
