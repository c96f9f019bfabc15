"""Evaluation metrics: NMSE, Dice coefficient, quadrant modular ratio,
region statistics, and pressure-normalized maximum principal strain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricsError
from .fem import NodalField, max_principal_strain_per_element
from .meshing import REGION_VESSEL


@dataclass
class RegionStats:
    region: str          # upper | lower | left | right
    mean: float          # Pa
    std: float           # Pa
    pixel_count: int


def nmse(truth, pred) -> float:
    """Sum of squared differences over the sum of squared truth pixels."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise MetricsError(f"shape mismatch {truth.shape} vs {pred.shape}")
    denom = np.sum(truth ** 2)
    if denom == 0:
        raise MetricsError("truth image is identically zero")
    return float(np.sum((truth - pred) ** 2) / denom)


def dsc(mask_t, mask_p) -> float:
    """Dice overlap 2|t&p| / (|t|+|p|); two empty masks count as 1."""
    t = np.asarray(mask_t).astype(bool)
    p = np.asarray(mask_p).astype(bool)
    if t.shape != p.shape:
        raise MetricsError(f"shape mismatch {t.shape} vs {p.shape}")
    total = t.sum() + p.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(t, p).sum() / total)


def quadrant_labels(shape):
    """Quadrant id per pixel: 0 upper, 1 lower, 2 left, 3 right.

    The two corner-to-corner diagonals of the image partition it around
    the image center.  Pixels exactly on a diagonal go to upper (top
    half) or lower (bottom half), so the partition is exhaustive and
    reproducible.
    """
    h, w = shape
    r = np.arange(h)[:, None] - (h - 1) / 2.0
    c = np.arange(w)[None, :] - (w - 1) / 2.0
    r, c = np.broadcast_arrays(r, c)
    # Ties (|r| == |c|, a pixel exactly on a diagonal) go to upper/lower.
    vertical = np.abs(c) <= np.abs(r)
    labels = np.where(vertical, np.where(r < 0, 0, 1), np.where(c < 0, 2, 3))
    return labels.astype(np.uint8)


def quadrant_modular_ratio(modulus, mask):
    """eta = mean(upper) / mean(lower) over masked pixels, plus region stats."""
    modulus = np.asarray(modulus, dtype=float)
    mask = np.asarray(mask).astype(bool)
    labels = quadrant_labels(modulus.shape)
    names = ("upper", "lower", "left", "right")
    stats = []
    means = {}
    for code, name in enumerate(names):
        sel = mask & (labels == code)
        n = int(sel.sum())
        if n:
            vals = modulus[sel]
            stats.append(RegionStats(name, float(vals.mean()), float(vals.std()), n))
            means[name] = vals.mean()
        else:
            stats.append(RegionStats(name, float("nan"), float("nan"), 0))
    if "upper" not in means or "lower" not in means:
        raise MetricsError("mask is empty in the upper or lower quadrant")
    eta = float(means["upper"] / means["lower"])
    return eta, stats


def pressure_normalized_principal_strain(u: NodalField, mesh, PP: float) -> float:
    """Vessel-average maximum principal strain divided by the pulse pressure."""
    if PP <= 0:
        raise MetricsError(f"pulse pressure must be positive, got {PP}")
    eP = max_principal_strain_per_element(u)
    vessel = mesh.region == REGION_VESSEL
    areas = mesh.element_areas()
    avg = float(np.sum(eP[vessel] * areas[vessel]) / np.sum(areas[vessel]))
    return avg / PP


def compare_samples(truth, pred, displacement=None, mesh=None, PP=None) -> dict:
    """Full metric report between two grid samples (see `metrics` CLI)."""
    report = {
        "nmse": nmse(truth.modulus, pred.modulus),
        "dsc": dsc(truth.modulus > 0, pred.modulus > 0),
    }
    try:
        eta, stats = quadrant_modular_ratio(pred.modulus, pred.modulus > 0)
        report["eta"] = eta
        report["regions"] = [vars(s) for s in stats]
        eta_t, _ = quadrant_modular_ratio(truth.modulus, truth.modulus > 0)
        report["eta_truth"] = eta_t
    except MetricsError as exc:
        report["eta_error"] = str(exc)
    if displacement is not None and mesh is not None and PP is not None:
        report["pressure_normalized_principal_strain"] = \
            pressure_normalized_principal_strain(displacement, mesh, PP)
    return report
