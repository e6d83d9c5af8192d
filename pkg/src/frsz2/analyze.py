"""Value and base-2 exponent histograms of matrix entries or vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TextIO

import numpy as np

__all__ = ["Histograms", "histograms", "write_value_csv", "write_exponent_csv"]


@dataclass
class Histograms:
    edges: np.ndarray
    counts: np.ndarray
    exponents: np.ndarray
    exponent_counts: np.ndarray

    @property
    def min_exponent(self) -> int | None:
        return int(self.exponents[0]) if self.exponents.size else None

    @property
    def max_exponent(self) -> int | None:
        return int(self.exponents[-1]) if self.exponents.size else None


def histograms(values, bins: int = 64) -> Histograms:
    """Fixed-width value bins over the observed range plus one bin per exponent.

    The exponent of ``x`` is ``floor(log2|x|)``, taken over nonzero finite
    entries only. A constant input yields a single value bin.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Histograms(np.zeros(0), empty, empty, empty)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        edges, counts = np.array([lo, hi]), np.array([v.size])
    else:
        counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    nz = v[v != 0.0]
    _, exp = np.frexp(nz)
    exps, exp_counts = np.unique(exp.astype(np.int64) - 1, return_counts=True)
    return Histograms(edges, counts.astype(np.int64), exps, exp_counts.astype(np.int64))


def write_value_csv(h: Histograms, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    for lo, hi, c in zip(h.edges[:-1].tolist(), h.edges[1:].tolist(), h.counts.tolist()):
        w.writerow([repr(lo), repr(hi), c])


def write_exponent_csv(h: Histograms, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["exponent", "count"])
    for e, c in zip(h.exponents.tolist(), h.exponent_counts.tolist()):
        w.writerow([e, c])
