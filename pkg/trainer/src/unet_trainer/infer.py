"""Inference: normalized forward pass rescaled back to a physical modulus."""

from __future__ import annotations

import logging
import time

import numpy as np
import torch

from .dataset import Sample, normalize_sample
from .egrid import write_egrid
from .model import UNet

log = logging.getLogger(__name__)


@torch.no_grad()
def infer(model: UNet, sample: Sample, device="cpu") -> np.ndarray:
    """Predicted modulus image in pascals, masked like the input."""
    norm = normalize_sample(sample)
    x = torch.from_numpy(norm.inputs[None]).to(device)
    pred = model(x)[0, 0].cpu().numpy().astype(np.float64)
    modulus = pred / norm.n_m
    n_negative = int((modulus[sample.mask] < 0).sum())
    if n_negative:
        log.info("clipping %d negative modulus pixels to 0 "
                 "(min %.3g Pa)", n_negative, modulus[sample.mask].min())
    modulus = np.clip(modulus, 0.0, None)
    return np.where(sample.mask, modulus, 0.0)


def infer_to_egrid(model: UNet, sample: Sample, out_path, device="cpu"):
    modulus = infer(model, sample, device=device)
    write_egrid(out_path, {
        "ux": sample.u_x.astype(np.float32),
        "uy": sample.u_y.astype(np.float32),
        "mu": modulus.astype(np.float32),
        "mask": sample.mask.astype(np.float32),
    }, {"P_pa": sample.pressure, "provenance": "dl_prediction"})
    return modulus


@torch.no_grad()
def benchmark_latency(model: UNet, sample: Sample, n: int, device="cpu") -> float:
    """Mean wall-clock seconds per single-sample inference over n runs."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    infer(model, sample, device=device)      # warm-up
    t0 = time.perf_counter()
    for _ in range(n):
        infer(model, sample, device=device)
    return (time.perf_counter() - t0) / n
