"""Reader/writer for the EGRID container used by the dataset generator.

Format: one JSON header line (version, shape, dtype, array names in
storage order, plus free-form metadata) followed by the named arrays as
raw little-endian float32 bytes, row-major, concatenated in order.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


class EgridError(RuntimeError):
    pass


def read_egrid(path):
    """Return (arrays dict, meta dict)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EgridError(f"{path}: invalid EGRID header") from exc
        if header.get("version") != FORMAT_VERSION:
            raise EgridError(f"{path}: unsupported EGRID version "
                             f"{header.get('version')}")
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        arrays = {}
        for name in header["arrays"]:
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise EgridError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    meta = {k: v for k, v in header.items()
            if k not in ("version", "shape", "dtype", "order", "arrays")}
    return arrays, meta


def write_egrid(path, arrays: dict, meta: dict | None = None):
    names = list(arrays)
    shapes = {tuple(np.asarray(a).shape) for a in arrays.values()}
    if len(shapes) != 1:
        raise EgridError(f"arrays must share one shape, got {shapes}")
    header = {
        "version": FORMAT_VERSION,
        "shape": list(shapes.pop()),
        "dtype": "f32le",
        "order": "row-major",
        "arrays": names,
    }
    header.update(meta or {})
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())
