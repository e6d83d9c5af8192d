"""FRSZ2 block floating-point codec.

A block of ``block_size`` binary64 values shares the largest biased exponent
found in the block. Every value is stored as an ``bit_length``-bit code: the
sign bit on top, then the significand (with its explicit leading one) shifted
right by the exponent difference and truncated toward zero.

Codes of one block form an LSB-first bit stream over 32-bit words: code ``j``
occupies stream bits ``[j*l, (j+1)*l)`` and bit ``b`` of the stream lives in
word ``b // 32`` at position ``b % 32``. Exponents and payload words are kept
in separate arrays.

Two decode routes exist on purpose. :func:`decompress_value` and
:func:`compress_block` work on Python integers one value at a time and follow
the bit-level steps literally. The array routines (:func:`compress`,
:func:`decompress`, :func:`decompress_block`) are vectorised with numpy and
are what the Krylov basis uses.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

__all__ = [
    "CodecError",
    "ContainerError",
    "Frsz2Params",
    "CompressedVector",
    "compress_block",
    "decode_code",
    "compress",
    "decompress",
    "decompress_value",
    "decompress_block",
    "storage_bytes",
    "bits_per_value",
    "max_abs_error_bound",
    "words_per_block",
    "to_bytes",
    "from_bytes",
    "write_container",
    "read_container",
]

EXP_BIAS = 1023
FRAC_BITS = 52
_FRAC_MASK = (1 << FRAC_BITS) - 1
_IMPLICIT_ONE = 1 << FRAC_BITS

MAGIC = b"FRSZ2\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sHIIQ")
HEADER_BYTES = _HEADER.size


class CodecError(ValueError):
    """Raised when input violates the codec contract (non-finite values, bad indices)."""


class ContainerError(CodecError):
    """Raised for malformed FRSZ2 container bytes."""


@dataclass(frozen=True)
class Frsz2Params:
    block_size: int = 32
    bit_length: int = 32

    def __post_init__(self) -> None:
        if int(self.block_size) < 1:
            raise CodecError(f"block_size must be >= 1, got {self.block_size}")
        if not 2 <= int(self.bit_length) <= 64:
            raise CodecError(f"bit_length must be in [2, 64], got {self.bit_length}")

    @property
    def words_per_block(self) -> int:
        return words_per_block(self.block_size, self.bit_length)


def words_per_block(block_size: int, bit_length: int) -> int:
    return -(-block_size * bit_length // 32)


def _n_blocks(n: int, block_size: int) -> int:
    return -(-n // block_size)


@dataclass(frozen=True, eq=False)
class CompressedVector:
    """One compressed vector: per-block biased exponents and packed payload words.

    ``exponents`` has shape ``(n_blocks,)`` and ``payload`` has shape
    ``(n_blocks, words_per_block)``; both are ``uint32`` and read-only.
    """

    params: Frsz2Params
    n: int
    exponents: np.ndarray = field(repr=False)
    payload: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        nb = _n_blocks(self.n, self.params.block_size)
        wpb = self.params.words_per_block
        exps = np.ascontiguousarray(self.exponents, dtype=np.uint32).reshape(nb)
        words = np.ascontiguousarray(self.payload, dtype=np.uint32).reshape(nb, wpb)
        exps.flags.writeable = False
        words.flags.writeable = False
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "payload", words)

    @property
    def n_blocks(self) -> int:
        return self.exponents.shape[0]

    @property
    def nbytes(self) -> int:
        return storage_bytes(self.n, self.params)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CompressedVector):
            return NotImplemented
        return (
            self.params == other.params
            and self.n == other.n
            and np.array_equal(self.exponents, other.exponents)
            and np.array_equal(self.payload, other.payload)
        )

    def __len__(self) -> int:
        return self.n


# ---------------------------------------------------------------------------
# scalar reference path


def _split(x: float) -> tuple[int, int, int]:
    """Return (sign, biased exponent, 53-bit significand) with subnormals flushed."""
    bits = struct.unpack("<Q", struct.pack("<d", x))[0]
    sign = bits >> 63
    exp = (bits >> FRAC_BITS) & 0x7FF
    if exp == 0:
        return sign, 0, 0
    return sign, exp, (bits & _FRAC_MASK) | _IMPLICIT_ONE


def compress_block(values: Sequence[float], bit_length: int) -> tuple[int, list[int]]:
    """Compress one block of binary64 values into ``(e_max, codes)``.

    The block length is whatever the caller passes; partial tail blocks must be
    zero-padded beforehand.
    """
    l = int(bit_length)
    if not 2 <= l <= 64:
        raise CodecError(f"bit_length must be in [2, 64], got {bit_length}")
    parts = []
    for i, v in enumerate(values):
        v = float(v)
        if not math.isfinite(v):
            raise CodecError(f"non-finite value {v!r} at index {i}")
        parts.append(_split(v))

    e_max = max((e for _, e, sig in parts if sig), default=0)
    codes = []
    for sign, e, sig in parts:
        q = 0
        if sig:
            # 53-bit significand -> l-1 bit field holding 1 integer bit
            shift = (e_max - e) + FRAC_BITS - (l - 2)
            q = sig >> shift if shift >= 0 else sig << -shift
        codes.append((sign << (l - 1)) | q)
    return e_max, codes


def decode_code(code: int, e_max: int, bit_length: int) -> float:
    """Decode one ``bit_length``-bit code against its block exponent."""
    l = int(bit_length)
    sign = (code >> (l - 1)) & 1
    q = code & ((1 << (l - 1)) - 1)
    if q == 0:
        return -0.0 if sign else 0.0
    k = (l - 1) - q.bit_length()
    e = e_max - k
    if e <= 0:
        return -0.0 if sign else 0.0
    lead = q.bit_length() - 1
    frac = q ^ (1 << lead)
    if lead <= FRAC_BITS:
        frac <<= FRAC_BITS - lead
    else:
        frac >>= lead - FRAC_BITS
    bits = (sign << 63) | (e << FRAC_BITS) | frac
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def _extract_code(words: np.ndarray, j: int, l: int) -> int:
    start = j * l
    acc = 0
    first, last = start // 32, (start + l - 1) // 32
    for w in range(last, first - 1, -1):
        acc = (acc << 32) | int(words[w])
    return (acc >> (start % 32)) & ((1 << l) - 1)


def decompress_value(cv: CompressedVector, i: int) -> float:
    """Random access: decode element ``i`` without touching the rest of its block."""
    if not 0 <= i < cv.n:
        raise CodecError(f"index {i} out of range for length {cv.n}")
    bs, l = cv.params.block_size, cv.params.bit_length
    blk, r = divmod(i, bs)
    code = _extract_code(cv.payload[blk], r, l)
    return decode_code(code, int(cv.exponents[blk]), l)


# ---------------------------------------------------------------------------
# vectorised path


def _lane_dtype(l: int) -> np.dtype | None:
    return {8: np.dtype("<u1"), 16: np.dtype("<u2"), 32: np.dtype("<u4"), 64: np.dtype("<u8")}.get(l)


def _pack(codes: np.ndarray, l: int) -> np.ndarray:
    """Pack ``(nb, bs)`` uint64 codes into ``(nb, wpb)`` uint32 words."""
    nb, bs = codes.shape
    wpb = words_per_block(bs, l)
    lane = _lane_dtype(l)
    if lane is not None and (bs * l) % 32 == 0:
        return np.ascontiguousarray(codes.astype(lane)).view("<u4").reshape(nb, wpb)
    words = np.zeros((nb, wpb + 2), dtype=np.uint64)
    low32 = np.uint64(0xFFFFFFFF)
    for j in range(bs):
        w, r = divmod(j * l, 32)
        c = codes[:, j]
        words[:, w] |= (c << np.uint64(r)) & low32
        words[:, w + 1] |= (c >> np.uint64(32 - r)) & low32
        if r:
            words[:, w + 2] |= c >> np.uint64(64 - r)
    return words[:, :wpb].astype(np.uint32)


def _unpack(words: np.ndarray, bs: int, l: int) -> np.ndarray:
    """Inverse of :func:`_pack`; returns ``(nb, bs)`` unsigned codes (uint32 when l <= 32 is lane aligned)."""
    nb = words.shape[0]
    lane = _lane_dtype(l)
    if lane is not None and (bs * l) % 32 == 0:
        codes = np.ascontiguousarray(words).view(lane).reshape(nb, bs)
        return codes if l >= 32 else codes.astype(np.uint32)
    wide = np.zeros((nb, words.shape[1] + 2), dtype=np.uint64)
    wide[:, : words.shape[1]] = words
    mask = np.uint64((1 << l) - 1)
    codes = np.empty((nb, bs), dtype=np.uint64)
    for j in range(bs):
        w, r = divmod(j * l, 32)
        c = (wide[:, w] >> np.uint64(r)) | (wide[:, w + 1] << np.uint64(32 - r))
        if r:
            c |= wide[:, w + 2] << np.uint64(64 - r)
        codes[:, j] = c & mask
    return codes


def _encode_blocks(blocks: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Encode ``(nb, bs)`` float64 blocks; returns (exponents uint32, codes uint64)."""
    bits = blocks.view(np.uint64)
    sign = bits >> np.uint64(63)
    exp = ((bits >> np.uint64(FRAC_BITS)) & np.uint64(0x7FF)).astype(np.int64)
    if exp.size and exp.max(initial=0) == 0x7FF:
        bad = np.flatnonzero(exp.ravel() == 0x7FF)[0]
        raise CodecError(f"non-finite value {blocks.ravel()[bad]!r} at index {bad}")
    normal = exp != 0
    sig = np.where(normal, (bits & np.uint64(_FRAC_MASK)) | np.uint64(_IMPLICIT_ONE), np.uint64(0))
    e_max = exp.max(axis=1, initial=0)
    shift = (e_max[:, None] - exp) + (FRAC_BITS - (l - 2))
    right = np.clip(shift, 0, 63).astype(np.uint64)
    left = np.clip(-shift, 0, 63).astype(np.uint64)
    q = (sig >> right) << left
    codes = (sign << np.uint64(l - 1)) | q
    return e_max.astype(np.uint32), codes


def _bit_length(q: np.ndarray) -> np.ndarray:
    """Vectorised ``int.bit_length`` for uint64 arrays (count-leading-zeros)."""
    n = np.zeros(q.shape, dtype=np.int64)
    x = q.copy()
    for s in (32, 16, 8, 4, 2, 1):
        hit = x >= np.uint64(1 << s)
        n += np.where(hit, s, 0)
        x = np.where(hit, x >> np.uint64(s), x)
    return n + (x != 0)


def _decode_codes(codes: np.ndarray, exponents: np.ndarray, l: int) -> np.ndarray:
    """Decode ``(nb, bs)`` codes against per-block exponents into float64."""
    lane = codes.dtype.type
    q = codes & lane((1 << (l - 1)) - 1)
    negative = (codes >> lane(l - 1)).astype(np.uint64)
    if l - 1 > FRAC_BITS + 1:
        # keep only the leading 53 bits so the float conversion below is exact
        drop = np.clip(_bit_length(q) - (FRAC_BITS + 1), 0, 63).astype(np.uint64)
        q = (q >> drop) << drop
    e_max = exponents.astype(np.int64)
    mag = q.astype(np.float64)
    mag *= np.ldexp(1.0, e_max - EXP_BIAS - (l - 2))[:, None]
    # Blocks with e_max < l - 1 may hold values whose biased exponent e_max - k
    # drops to <= 0; those flush to zero and the scale factor may be subnormal.
    low = np.flatnonzero(e_max < l - 1)
    if low.size:
        ql, el = q[low], e_max[low][:, None]
        m = np.ldexp(ql.astype(np.float64), (el - EXP_BIAS - (l - 2)).astype(np.int32))
        # e_max - k <= 0  <=>  q < 2**(l - 1 - e_max)
        m[ql < (np.uint64(1) << ((l - 1) - el).astype(np.uint64))] = 0.0
        mag[low] = m
    mag.view(np.uint64)[...] |= negative << np.uint64(63)
    return mag


def compress(values: np.ndarray | Sequence[float], params: Frsz2Params | None = None) -> CompressedVector:
    params = params or Frsz2Params()
    x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    n = x.size
    bs, l = params.block_size, params.bit_length
    nb = _n_blocks(n, bs)
    padded = np.zeros(nb * bs, dtype=np.float64)
    padded[:n] = x
    exps, codes = _encode_blocks(padded.reshape(nb, bs), l)
    return CompressedVector(params, n, exps, _pack(codes, l))


def compress_many(panel: np.ndarray, params: Frsz2Params) -> tuple[np.ndarray, np.ndarray]:
    """Compress each row of a 2-D array; returns stacked (exponents, payload).

    Output shapes are ``(rows, n_blocks)`` and ``(rows, n_blocks, wpb)``.
    """
    panel = np.ascontiguousarray(panel, dtype=np.float64)
    rows, n = panel.shape
    bs, l = params.block_size, params.bit_length
    nb = _n_blocks(n, bs)
    padded = np.zeros((rows, nb * bs), dtype=np.float64)
    padded[:, :n] = panel
    exps, codes = _encode_blocks(padded.reshape(rows * nb, bs), l)
    words = _pack(codes, l)
    return exps.reshape(rows, nb), words.reshape(rows, nb, params.words_per_block)


def decompress_many(exponents: np.ndarray, payload: np.ndarray, n: int, params: Frsz2Params) -> np.ndarray:
    """Decode stacked columns produced by :func:`compress_many` into ``(rows, n)``."""
    rows, nb = exponents.shape
    bs, l = params.block_size, params.bit_length
    codes = _unpack(payload.reshape(rows * nb, -1), bs, l)
    out = _decode_codes(codes, exponents.reshape(rows * nb), l)
    return out.reshape(rows, nb * bs)[:, :n]


def decompress(cv: CompressedVector) -> np.ndarray:
    bs, l = cv.params.block_size, cv.params.bit_length
    codes = _unpack(cv.payload, bs, l)
    return _decode_codes(codes, cv.exponents, l).ravel()[: cv.n]


def decompress_block(cv: CompressedVector, block_idx: int) -> np.ndarray:
    """Decode one whole block; padding positions past ``n`` come back as 0.0."""
    if not 0 <= block_idx < cv.n_blocks:
        raise CodecError(f"block index {block_idx} out of range for {cv.n_blocks} blocks")
    bs, l = cv.params.block_size, cv.params.bit_length
    codes = _unpack(cv.payload[block_idx : block_idx + 1], bs, l)
    return _decode_codes(codes, cv.exponents[block_idx : block_idx + 1], l).ravel()


def storage_bytes(n: int, params: Frsz2Params | None = None) -> int:
    """Bytes for exponents plus payload of ``n`` values (container header excluded)."""
    if n < 0:
        raise CodecError(f"n must be >= 0, got {n}")
    params = params or Frsz2Params()
    nb = _n_blocks(n, params.block_size)
    return nb * params.words_per_block * 4 + nb * 4


def bits_per_value(params: Frsz2Params | None = None) -> float:
    """Average stored bits per value for full blocks, exponent included."""
    params = params or Frsz2Params()
    return storage_bytes(params.block_size, params) * 8 / params.block_size


def max_abs_error_bound(e_max: int, bit_length: int) -> float:
    """Exclusive upper bound on the truncation error inside a block with exponent ``e_max``."""
    if not 0 <= e_max <= 2046:
        raise CodecError(f"e_max must be in [0, 2046], got {e_max}")
    return math.ldexp(1.0, (e_max - EXP_BIAS) - (bit_length - 2))


# ---------------------------------------------------------------------------
# container


def to_bytes(cv: CompressedVector) -> bytes:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, cv.params.block_size, cv.params.bit_length, cv.n)
    return header + cv.exponents.astype("<u4").tobytes() + cv.payload.astype("<u4").tobytes()


def from_bytes(data: bytes) -> CompressedVector:
    if len(data) < HEADER_BYTES:
        raise ContainerError(f"container truncated: {len(data)} bytes, header needs {HEADER_BYTES}")
    magic, version, bs, l, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    try:
        params = Frsz2Params(bs, l)
    except CodecError as exc:
        raise ContainerError(str(exc)) from exc
    nb = _n_blocks(n, bs)
    expected = HEADER_BYTES + storage_bytes(n, params)
    if len(data) != expected:
        raise ContainerError(f"container length {len(data)} does not match expected {expected}")
    body = np.frombuffer(data, dtype="<u4", offset=HEADER_BYTES)
    exps = body[:nb]
    words = body[nb:].reshape(nb, params.words_per_block)
    return CompressedVector(params, int(n), exps, words)


def write_container(cv: CompressedVector, fh: BinaryIO) -> int:
    data = to_bytes(cv)
    fh.write(data)
    return len(data)


def read_container(fh: BinaryIO) -> CompressedVector:
    return from_bytes(fh.read())
