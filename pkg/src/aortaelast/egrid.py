"""EGRID container: one JSON header line + raw little-endian float32 arrays.

The header records the array names in storage order, the grid shape and
whatever scalar metadata the producer attaches (pressure, seed, pixel
pitch).  Arrays follow concatenated, row-major.  The format is bit-exact
and readable from any language with a JSON parser.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DatasetError

FORMAT_VERSION = 1


def write_egrid(path, arrays: dict, meta: dict | None = None):
    """Write named 2D float arrays plus metadata; array order is preserved."""
    names = list(arrays)
    shapes = {tuple(np.asarray(a).shape) for a in arrays.values()}
    if len(shapes) != 1:
        raise DatasetError(f"arrays must share one shape, got {shapes}")
    shape = shapes.pop()
    header = {
        "version": FORMAT_VERSION,
        "shape": list(shape),
        "dtype": "f32le",
        "order": "row-major",
        "arrays": names,
    }
    header.update(meta or {})
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def read_egrid(path):
    """Return (arrays dict, meta dict) from an EGRID file."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetError(f"{path}: invalid EGRID header") from exc
        if header.get("version") != FORMAT_VERSION:
            raise DatasetError(f"{path}: unsupported EGRID version {header.get('version')}")
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        arrays = {}
        for name in header["arrays"]:
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DatasetError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    meta = {k: v for k, v in header.items()
            if k not in ("version", "shape", "dtype", "order", "arrays")}
    return arrays, meta


def is_valid_egrid(path):
    try:
        read_egrid(path)
        return True
    except (DatasetError, OSError):
        return False
