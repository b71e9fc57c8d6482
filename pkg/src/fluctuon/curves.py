"""Sampled decay envelopes and their CSV form."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["DecayCurve", "format_float"]


def format_float(x: float) -> str:
    """Shortest repr that round-trips a double exactly."""
    return repr(float(x))


@dataclass
class DecayCurve:
    """Complex envelope on a time grid.

    Attributes
    ----------
    t : ndarray
        Times in us.
    values : ndarray
        Complex envelope values.
    method : str
        Tag of the method that produced the curve.
    stderr : ndarray, optional
        Standard error per point (Monte-Carlo only).
    meta : dict
        Free-form parameters recorded in the CSV header.
    """

    t: np.ndarray
    values: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.t.shape != self.values.shape:
            raise ValueError("t and values must have the same shape")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)

    @property
    def real(self):
        return self.values.real

    @property
    def abs(self):
        return np.abs(self.values)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        buf.write(f"# method={self.method} meta={json.dumps(self.meta, sort_keys=True)}\n")
        cols = ["t", "re", "im", "abs"] + (["stderr"] if self.stderr is not None else [])
        buf.write(",".join(cols) + "\n")
        for i, t in enumerate(self.t):
            v = self.values[i]
            row = [t, v.real, v.imag, abs(v)]
            if self.stderr is not None:
                row.append(self.stderr[i])
            buf.write(",".join(format_float(x) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DecayCurve":
        method, meta = "unknown", {}
        rows, cols = [], None
        for line in text.splitlines():
            if line.startswith("# method="):
                head, _, rest = line[2:].partition(" meta=")
                method = head.split("=", 1)[1]
                meta = json.loads(rest) if rest else {}
            elif line.startswith("#") or not line.strip():
                continue
            elif cols is None:
                cols = line.strip().split(",")
            else:
                rows.append([float(x) for x in line.split(",")])
        data = np.array(rows, dtype=float).reshape(-1, len(cols))
        idx = {c: i for i, c in enumerate(cols)}
        se = data[:, idx["stderr"]] if "stderr" in idx else None
        return cls(data[:, idx["t"]], data[:, idx["re"]] + 1j * data[:, idx["im"]], method, se, meta)
