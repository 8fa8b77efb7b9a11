"""Binary field dumps, data-file loading and CSV helpers.

Field layout (little endian):
    magic b"RLFD", uint32 version, uint32 ndim, uint32 shape[ndim],
    float64 spacing[ndim], float64 center[ndim], then the values as
    row-major complex64 (real, imag) pairs.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .extension import GridFunction, smooth_bump
from .surfaces import Box

MAGIC = b"RLFD"
VERSION = 1


@dataclass(eq=False)
class Field:
    values: np.ndarray
    spacing: np.ndarray
    center: np.ndarray

    def axis(self, i: int) -> np.ndarray:
        n = self.values.shape[i]
        return self.center[i] + (np.arange(n) - (n - 1) / 2) * self.spacing[i]


def write_field(path, values, spacing, center) -> None:
    values = np.asarray(values)
    ndim = values.ndim
    spacing = np.broadcast_to(np.asarray(spacing, "<f8"), (ndim,))
    center = np.broadcast_to(np.asarray(center, "<f8"), (ndim,))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(f"<II{ndim}I", VERSION, ndim, *values.shape))
        fh.write(spacing.astype("<f8").tobytes())
        fh.write(center.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(values, dtype="<c8").tobytes())


def read_field(path) -> Field:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a field dump (bad magic)")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported field version {version}")
    off = 12
    shape = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    spacing = np.frombuffer(raw, "<f8", ndim, off)
    off += 8 * ndim
    center = np.frombuffer(raw, "<f8", ndim, off)
    off += 8 * ndim
    count = int(np.prod(shape))
    if len(raw) - off != 8 * count:
        raise ValueError("truncated field dump")
    values = np.frombuffer(raw, "<c8", count, off).reshape(shape)
    return Field(values.astype(complex), spacing.copy(), center.copy())


def field_summary_rows(field: Field, d: int) -> list:
    """One row per t-slice: t coordinates, L2 norm over x, max |.|."""
    vals = field.values
    cell_x = float(np.prod(field.spacing[:d]))
    t_shape = vals.shape[d:]
    flat = vals.reshape(int(np.prod(vals.shape[:d])), -1)
    t_axes = [field.axis(d + j) for j in range(len(t_shape))]
    t_pts = np.stack(np.meshgrid(*t_axes, indexing="ij"), -1).reshape(-1, len(t_shape))
    rows = []
    for i, t in enumerate(t_pts):
        a = np.abs(flat[:, i])
        rows.append([*t.tolist(), float(np.sqrt(np.sum(a ** 2) * cell_x)), float(a.max())])
    return rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def load_grid_function(obj) -> GridFunction:
    """Data from JSON: {box, n, values: [[re, im], ...]} (row-major) or
    {box, n, kind: "bump" | "ones" | "random", seed}."""
    if isinstance(obj, (str, Path)):
        obj = json.loads(Path(obj).read_text())
    box = Box.from_json(obj["box"])
    n = int(obj["n"])
    if "values" in obj:
        v = np.asarray(obj["values"], float)
        vals = v[..., 0] + 1j * v[..., 1] if v.ndim >= 1 and v.shape[-1] == 2 else v
        return GridFunction(box, np.asarray(vals).reshape((n,) * box.dim))
    kind = obj.get("kind", "bump")
    if kind == "bump":
        return GridFunction.from_function(box, n, smooth_bump(box))
    if kind == "ones":
        return GridFunction.from_function(box, n, lambda x: np.ones(np.shape(x)[:-1]))
    if kind == "random":
        from .experiments import random_smooth_data
        return GridFunction.from_function(box, n, random_smooth_data(box, int(obj.get("seed", 0))))
    raise ValueError(f"unknown data kind {kind!r}")
