"""Krylov basis panel behind a storage-format abstraction.

Columns are written whole and stored in their storage format; every read
decodes back to binary64. All arithmetic on the decoded values is binary64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import codec

__all__ = ["StorageFormat", "KrylovBasis", "BasisError", "FORMAT_NAMES"]

F16_MAX = float(np.finfo(np.float16).max)


class BasisError(IndexError):
    pass


@dataclass(frozen=True)
class StorageFormat:
    """``kind`` is one of ``f64``, ``f32``, ``f16``, ``frsz2``; ``bit_length`` only for frsz2."""

    kind: str
    bit_length: int | None = None
    block_size: int = 32

    def __post_init__(self) -> None:
        if self.kind not in ("f64", "f32", "f16", "frsz2"):
            raise ValueError(f"unknown storage kind {self.kind!r}")
        if self.kind == "frsz2":
            codec.Frsz2Params(self.block_size, self.bit_length or 0)
        elif self.bit_length is not None:
            raise ValueError(f"{self.kind} takes no bit_length")

    @classmethod
    def parse(cls, name: str) -> StorageFormat:
        """Parse names such as ``f64``, ``float32``, ``frsz2-21``."""
        key = name.strip().lower()
        aliases = {"f64": "f64", "float64": "f64", "double": "f64",
                   "f32": "f32", "float32": "f32", "float": "f32", "single": "f32",
                   "f16": "f16", "float16": "f16", "half": "f16"}
        if key in aliases:
            return cls(aliases[key])
        if key.startswith("frsz2-") or key.startswith("frsz2_"):
            try:
                l = int(key[6:])
            except ValueError:
                raise ValueError(f"unknown storage format {name!r}") from None
            return cls("frsz2", l)
        raise ValueError(f"unknown storage format {name!r}")

    @property
    def name(self) -> str:
        return f"frsz2-{self.bit_length}" if self.kind == "frsz2" else self.kind

    @property
    def params(self) -> codec.Frsz2Params:
        if self.kind != "frsz2":
            raise ValueError(f"{self.name} has no FRSZ2 parameters")
        return codec.Frsz2Params(self.block_size, self.bit_length)

    @property
    def lane_dtype(self) -> np.dtype | None:
        return {"f64": np.dtype(np.float64), "f32": np.dtype(np.float32),
                "f16": np.dtype(np.float16)}.get(self.kind)

    def stored_bytes(self, n: int) -> int:
        if self.kind == "frsz2":
            return codec.storage_bytes(n, self.params)
        return n * self.lane_dtype.itemsize

    def roundtrip(self, values) -> np.ndarray:
        """Encode then decode, as a basis column write followed by a read would."""
        values = np.asarray(values, dtype=np.float64)
        if self.kind == "frsz2":
            return codec.decompress(codec.compress(values, self.params))
        return _narrow(values, self.lane_dtype).astype(np.float64)

    def __str__(self) -> str:
        return self.name


FORMAT_NAMES = ("f64", "f32", "f16", "frsz2-16", "frsz2-21", "frsz2-32")


def _narrow(values: np.ndarray, dtype: np.dtype) -> np.ndarray:
    if dtype == np.float16:
        # saturate instead of overflowing to inf
        values = np.clip(values, -F16_MAX, F16_MAX)
    return values.astype(dtype)


def _project(panel: np.ndarray, w: np.ndarray) -> np.ndarray:
    if panel.shape[0] == 0 or panel.shape[1] == 0:
        return np.zeros(panel.shape[0])
    prod = np.ascontiguousarray((panel * w).T)
    if prod.shape[1] == 1:
        # a contiguous single-column sum would switch to pairwise summation
        return np.add.accumulate(prod[:, 0])[-1:]
    # reducing over the outer axis adds rows in order
    return prod.sum(axis=0)


def _subtract(panel: np.ndarray, w: np.ndarray, h) -> None:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (panel.shape[0],):
        raise ValueError("coefficient count does not match panel width")
    for i in range(panel.shape[0]):
        w -= h[i] * panel[i]


class KrylovBasis:
    """Column-major panel of up to ``capacity`` vectors of length ``n``."""

    def __init__(self, n: int, capacity: int, fmt: StorageFormat | str = "f64"):
        if n < 0 or capacity < 1:
            raise ValueError("need n >= 0 and capacity >= 1")
        self.n = int(n)
        self.capacity = int(capacity)
        self.format = StorageFormat.parse(fmt) if isinstance(fmt, str) else fmt
        self.count = 0
        if self.format.kind == "frsz2":
            p = self.format.params
            self._bs = p.block_size
            self._nb = -(-self.n // p.block_size)
            self._exps = np.zeros((capacity, self._nb), dtype=np.uint32)
            self._words = np.zeros((capacity, self._nb, p.words_per_block), dtype=np.uint32)
        else:
            self._bs = self.format.block_size
            self._nb = -(-self.n // self._bs)
            self._lanes = np.zeros((capacity, self.n), dtype=self.format.lane_dtype)

    @property
    def n_blocks(self) -> int:
        return self._nb

    @property
    def block_size(self) -> int:
        return self._bs

    def stored_bytes(self) -> int:
        return self.count * self.format.stored_bytes(self.n)

    def reset(self) -> None:
        self.count = 0

    # -- checks --------------------------------------------------------------

    def _check_read(self, j: int) -> None:
        if not 0 <= j < self.count:
            raise BasisError(f"column {j} not readable (count={self.count})")

    def _check_vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        return v

    # -- writes --------------------------------------------------------------

    def write_vector(self, j: int, values) -> None:
        if j > self.count or j >= self.capacity or j < 0:
            raise BasisError(f"cannot write column {j} (count={self.count}, capacity={self.capacity})")
        values = self._check_vec(values)
        if self.format.kind == "frsz2":
            cv = codec.compress(values, self.format.params)
            self._exps[j] = cv.exponents
            self._words[j] = cv.payload
        else:
            if not np.all(np.isfinite(values)):
                raise codec.CodecError(f"non-finite value written to column {j}")
            self._lanes[j] = _narrow(values, self.format.lane_dtype)
        self.count = max(self.count, j + 1)

    # -- reads ---------------------------------------------------------------

    def column(self, j: int) -> codec.CompressedVector:
        """The stored FRSZ2 column ``j`` (frsz2 formats only)."""
        self._check_read(j)
        if self.format.kind != "frsz2":
            raise ValueError(f"column {j} is stored as {self.format.name}, not FRSZ2")
        return codec.CompressedVector(self.format.params, self.n, self._exps[j], self._words[j])

    def read_vector(self, j: int) -> np.ndarray:
        self._check_read(j)
        return self.read_panel(j, j + 1)[0]

    def read_panel(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Decode columns ``start:stop`` into a ``(cols, n)`` binary64 array."""
        stop = self.count if stop is None else stop
        if not 0 <= start <= stop <= self.count:
            raise BasisError(f"panel {start}:{stop} not readable (count={self.count})")
        if self.format.kind == "frsz2":
            return codec.decompress_many(self._exps[start:stop], self._words[start:stop], self.n, self.format.params)
        return self._lanes[start:stop].astype(np.float64)

    def read_block(self, j: int, blk: int) -> np.ndarray:
        """Decode block ``blk`` of column ``j``; padding past ``n`` reads 0.0."""
        self._check_read(j)
        if not 0 <= blk < self._nb:
            raise BasisError(f"block {blk} out of range for {self._nb} blocks")
        if self.format.kind == "frsz2":
            return codec.decompress_block(self.column(j), blk)
        out = np.zeros(self._bs, dtype=np.float64)
        lo = blk * self._bs
        seg = self._lanes[j, lo : lo + self._bs]
        out[: seg.size] = seg
        return out

    def read_value(self, j: int, i: int) -> float:
        """Element read; uses the random-access decoder and is slow for frsz2."""
        self._check_read(j)
        if not 0 <= i < self.n:
            raise BasisError(f"element {i} out of range for length {self.n}")
        if self.format.kind == "frsz2":
            return codec.decompress_value(self.column(j), i)
        return float(self._lanes[j, i])

    # -- arithmetic ----------------------------------------------------------

    def dot(self, j: int, w) -> float:
        """``V[:, j] . w`` accumulated left to right."""
        self._check_read(j)
        return float(self.project(self._check_vec(w), j, j + 1)[0])

    def axpy(self, j: int, alpha: float, y: np.ndarray) -> None:
        """In place ``y -= alpha * V[:, j]``."""
        self._check_read(j)
        self._check_vec(y)
        if alpha == 0.0:
            return
        y -= alpha * self.read_vector(j)

    def project(self, w, start: int = 0, stop: int | None = None) -> np.ndarray:
        """``V[:, start:stop]^T w``; each entry is a left-to-right sum over the vector."""
        w = self._check_vec(w)
        return _project(self.read_panel(start, stop), w)

    def subtract(self, w: np.ndarray, h, start: int = 0, stop: int | None = None) -> None:
        """In place ``w -= V[:, start:stop] @ h``, adding columns in order."""
        self._check_vec(w)
        _subtract(self.read_panel(start, stop), w, h)

    def orthogonalize(self, w: np.ndarray, stop: int | None = None) -> np.ndarray:
        """One classical Gram-Schmidt pass against columns ``0:stop``.

        Returns ``h = V^T w`` and updates ``w -= V h`` in place, decoding the
        panel only once.
        """
        self._check_vec(w)
        panel = self.read_panel(0, stop)
        h = _project(panel, w)
        _subtract(panel, w, h)
        return h

    def combine(self, y, stop: int | None = None) -> np.ndarray:
        """``V[:, :stop] @ y`` accumulated column by column."""
        panel = self.read_panel(0, stop)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (panel.shape[0],):
            raise ValueError("coefficient count does not match panel width")
        out = np.zeros(self.n)
        for i in range(panel.shape[0]):
            out += y[i] * panel[i]
        return out

    def dump_column(self, j: int, fh: BinaryIO) -> int:
        """Write column ``j`` as an FRSZ2 container (frsz2 formats only)."""
        return codec.write_container(self.column(j), fh)
