"""Dataset access and displacement-magnitude normalization.

A sample stores pressure-normalized displacement images (m/Pa) and the
modulus image (Pa).  For training, both displacement channels are divided
by the peak displacement magnitude n_m and the modulus is multiplied by
it, making the network's input unit-peak and its target dimensionally
matched; the physical modulus is recovered as prediction / n_m.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .egrid import EgridError, read_egrid

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DatasetError(RuntimeError):
    pass


class NormalizationError(RuntimeError):
    pass


@dataclass
class Sample:
    """One paired displacement/modulus image as stored on disk."""

    u_x: np.ndarray          # m/Pa
    u_y: np.ndarray          # m/Pa
    modulus: np.ndarray      # Pa
    mask: np.ndarray         # bool
    pressure: float          # Pa
    meta: dict

    @classmethod
    def load(cls, path):
        arrays, meta = read_egrid(path)
        required = {"ux", "uy", "mu", "mask"}
        if not required <= arrays.keys():
            raise DatasetError(f"{path}: missing arrays "
                               f"{sorted(required - arrays.keys())}")
        return cls(u_x=arrays["ux"].astype(np.float64),
                   u_y=arrays["uy"].astype(np.float64),
                   modulus=arrays["mu"].astype(np.float64),
                   mask=arrays["mask"] > 0.5,
                   pressure=float(meta.get("P_pa", 0.0)), meta=meta)


@dataclass
class NormalizedSample:
    """Unit-peak displacement inputs and the matching scaled target."""

    inputs: np.ndarray       # (2, H, W), peak magnitude 1
    target: np.ndarray       # (H, W), modulus * n_m
    n_m: float               # 1/Pa * m, the peak displacement magnitude
    mask: np.ndarray
    meta: dict


def normalize_sample(sample: Sample) -> NormalizedSample:
    magnitude = np.hypot(sample.u_x, sample.u_y)
    n_m = float(magnitude.max())
    if n_m == 0.0:
        raise NormalizationError("displacement is identically zero")
    inputs = np.stack([sample.u_x / n_m, sample.u_y / n_m])
    target = sample.modulus * n_m
    return NormalizedSample(inputs=inputs.astype(np.float32),
                            target=target.astype(np.float32),
                            n_m=n_m, mask=sample.mask, meta=sample.meta)


def load_manifest(dataset_dir):
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest at {path}: {exc}") from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest format_version "
                           f"{manifest.get('format_version')}")
    return manifest


class SplitDataset:
    """Lazy array access to one manifest split (train/val/test)."""

    def __init__(self, dataset_dir, split):
        manifest = load_manifest(dataset_dir)
        if split not in manifest["files"]:
            raise DatasetError(f"manifest has no split {split!r}")
        self.dataset_dir = dataset_dir
        self.split = split
        self.files = [os.path.join(dataset_dir, f)
                      for f in manifest["files"][split]]

    def __len__(self):
        return len(self.files)

    def __getitem__(self, index) -> NormalizedSample:
        try:
            return normalize_sample(Sample.load(self.files[index]))
        except EgridError as exc:
            raise DatasetError(str(exc)) from exc
