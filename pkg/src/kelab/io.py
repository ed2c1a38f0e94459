"""Persistence: flat binary grid fields and CSV tables.

Binary layout (all little-endian)::

    magic   8 bytes  b"KELABFLD"
    version u4       1
    chart   u4       0 = torus, 1 = annulus
    n       u4       complex dimension
    ndim    u4       number of grid axes
    dims    ndim x u4
    t_re    f8
    t_im    f8
    payload prod(dims) x f8, row-major cell values
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FieldHeader", "write_field", "read_field", "field_bytes", "write_csv", "read_csv"]

MAGIC = b"KELABFLD"
VERSION = 1
CHARTS = ("torus", "annulus")


@dataclass(frozen=True)
class FieldHeader:
    chart: str
    n: int
    dims: tuple
    t: complex


def field_bytes(values, chart: str, n: int, t=0.0) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    if chart not in CHARTS:
        raise ValueError(f"unknown chart {chart!r}")
    t = complex(t)
    head = MAGIC + struct.pack("<4I", VERSION, CHARTS.index(chart), n, values.ndim)
    head += struct.pack(f"<{values.ndim}I", *values.shape)
    head += struct.pack("<2d", t.real, t.imag)
    return head + values.tobytes(order="C")


def write_field(path, field, t=None) -> Path:
    """Write a PotentialField-like object (``fiber``, ``values``) to ``path``."""
    fiber = field.fiber
    t = getattr(field, "t", 0.0) if t is None else t
    path = Path(path)
    path.write_bytes(field_bytes(field.values, fiber.kind, fiber.n, t))
    return path


def read_field(path):
    """Return ``(FieldHeader, values)`` from a binary field file."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a field file")
    version, chart, n, ndim = struct.unpack_from("<4I", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported field version {version}")
    off = 24
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    t_re, t_im = struct.unpack_from("<2d", data, off)
    off += 16
    count = int(np.prod(dims))
    if len(data) - off != 8 * count:
        raise ValueError(f"{path}: payload size does not match the header")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims)
    return FieldHeader(CHARTS[chart], n, tuple(dims), complex(t_re, t_im)), values.astype(float)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    """Write rows with fixed column order; floats use shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_csv(path):
    """Return ``(columns, rows)`` with numeric cells converted to float."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        columns = next(r)
        rows = []
        for row in r:
            out = []
            for cell in row:
                try:
                    out.append(float(cell))
                except ValueError:
                    out.append(cell)
            rows.append(out)
    return columns, rows
