"""Read-throughput roofline microbenchmark.

Each kernel streams one array front to back, decodes every value to binary64,
applies ``ops`` dependent multiply-add steps to it and folds the result into
a running sum. Decoding happens inside the same loop as the arithmetic, the
way an accessor-based kernel reads compressed storage.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

from . import codec
from .basis import StorageFormat

__all__ = ["BenchResult", "DEFAULT_INTENSITIES", "prepare", "run_kernel", "bench", "reference_sum"]

DEFAULT_INTENSITIES = (1, 2, 4, 8, 16, 32, 64, 128)
_MUL = 0.9999999
_ADD = 1e-7


@dataclass(frozen=True)
class BenchResult:
    format: str
    intensity: int
    n: int
    seconds: float
    stored_bytes: int
    checksum: float

    @property
    def stored_gbs(self) -> float:
        return self.stored_bytes / self.seconds / 1e9

    @property
    def logical_gbs(self) -> float:
        return self.n * 8 / self.seconds / 1e9

    @property
    def gflops(self) -> float:
        return 2 * self.intensity * self.n / self.seconds / 1e9


@numba.njit(cache=True)
def _work(v, ops):
    for _ in range(ops):
        v = v * _MUL + _ADD
    return v


@numba.njit(cache=True)
def _kernel_float(data, ops):
    acc = 0.0
    for i in range(data.size):
        acc += _work(np.float64(data[i]), ops)
    return acc


@numba.njit(cache=True)
def _kernel_table(data, table, ops):
    # binary16 lanes decoded through a 65536-entry table
    acc = 0.0
    for i in range(data.size):
        acc += _work(table[data[i]], ops)
    return acc


@numba.njit(cache=True)
def _decode(c, l, e, scale):
    q = c & ((np.int64(1) << (l - 1)) - 1)
    # e_max - k <= 0 flushes to zero; only possible when e_max < l - 1
    if e < l - 1 and q < (np.int64(1) << (l - 1 - e)):
        q = 0
    return np.float64(q) * scale[(c >> (l - 1)) & 1]


@numba.njit(cache=True)
def _kernel_frsz2_lane(exps, codes, l, n, ops):
    # codes: (n_blocks, bs) lane-aligned integers (l = 16 or 32)
    nb, bs = codes.shape
    qmask = (1 << (l - 1)) - 1
    scale = np.empty(2)
    acc = 0.0
    for b in range(nb):
        e = np.int64(exps[b])
        scale[0] = math.ldexp(1.0, e - 1023 - (l - 2))
        scale[1] = -scale[0]
        lim = bs if (b + 1) * bs <= n else n - b * bs
        if e < l - 1:
            for r in range(lim):
                acc += _work(_decode(np.int64(codes[b, r]), l, e, scale), ops)
        else:
            for r in range(lim):
                c = np.int64(codes[b, r])
                acc += _work(np.float64(c & qmask) * scale[c >> (l - 1)], ops)
    return acc


@numba.njit(cache=True)
def _kernel_frsz2_packed(exps, words, l, bs, n, ops):
    # words: (n_blocks, wpb) uint32, LSB-first bit stream per block
    nb = words.shape[0]
    wpb = words.shape[1]
    cmask = (np.int64(1) << l) - 1
    scale = np.empty(2)
    acc = 0.0
    for b in range(nb):
        e = np.int64(exps[b])
        scale[0] = math.ldexp(1.0, e - 1023 - (l - 2))
        scale[1] = -scale[0]
        lim = bs if (b + 1) * bs <= n else n - b * bs
        for r in range(lim):
            start = r * l
            w = start >> 5
            lo = np.int64(words[b, w])
            hi = np.int64(words[b, w + 1]) if w + 1 < wpb else np.int64(0)
            c = ((lo | (hi << 32)) >> (start & 31)) & cmask
            acc += _work(_decode(c, l, e, scale), ops)
    return acc


def _f16_table() -> np.ndarray:
    return np.arange(65536, dtype=np.uint16).view(np.float16).astype(np.float64)


@dataclass
class _Prepared:
    fmt: StorageFormat
    n: int
    args: tuple
    kernel: object
    stored_bytes: int


def prepare(values: np.ndarray, fmt: StorageFormat | str) -> _Prepared:
    """Convert ``values`` into the storage layout the format's kernel streams."""
    fmt = StorageFormat.parse(fmt) if isinstance(fmt, str) else fmt
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.size
    if fmt.kind == "frsz2":
        if fmt.bit_length > 32:
            raise ValueError("benchmark kernels support bit lengths up to 32")
        cv = codec.compress(values, fmt.params)
        l = fmt.bit_length
        if l in (16, 32) and (fmt.block_size * l) % 32 == 0:
            codes = cv.payload.view("<u2" if l == 16 else "<u4").reshape(cv.n_blocks, fmt.block_size)
            return _Prepared(fmt, n, (cv.exponents, codes, l, n), _kernel_frsz2_lane, cv.nbytes)
        return _Prepared(fmt, n, (cv.exponents, cv.payload, l, fmt.block_size, n), _kernel_frsz2_packed, cv.nbytes)
    if fmt.kind == "f16":
        lanes = np.clip(values, -65504.0, 65504.0).astype(np.float16).view(np.uint16)
        return _Prepared(fmt, n, (lanes, _f16_table()), _kernel_table, lanes.nbytes)
    lanes = values.astype(fmt.lane_dtype)
    return _Prepared(fmt, n, (lanes,), _kernel_float, lanes.nbytes)


def run_kernel(prepared: _Prepared, ops: int) -> float:
    return float(prepared.kernel(*prepared.args, ops))


def reference_sum(values: np.ndarray, fmt: StorageFormat | str, ops: int) -> float:
    """Same computation as the kernels, in plain Python over decoded values."""
    fmt = StorageFormat.parse(fmt) if isinstance(fmt, str) else fmt
    acc = 0.0
    for v in fmt.roundtrip(values).tolist():
        for _ in range(ops):
            v = v * _MUL + _ADD
        acc += v
    return acc


def bench(values: np.ndarray, formats, intensities=DEFAULT_INTENSITIES, trials: int = 10) -> list[BenchResult]:
    """Minimum time over ``trials`` runs for every (format, intensity) pair."""
    results = []
    for name in formats:
        prepared = prepare(values, name)
        run_kernel(prepared, 1)  # compile and warm caches
        for ops in intensities:
            best = math.inf
            checksum = 0.0
            for _ in range(trials):
                tic = time.perf_counter()
                checksum = run_kernel(prepared, ops)
                best = min(best, time.perf_counter() - tic)
            results.append(BenchResult(prepared.fmt.name, ops, prepared.n, best, prepared.stored_bytes, checksum))
    return results
