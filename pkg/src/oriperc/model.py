"""Lattice geometry, model parameters and the random-bitmask primitive.

Randomness comes from Philox4x32-10, a counter-based generator: every
64-bit word is a pure function of ``(seed, stream, counter)``.  Samplers
address their raw words by position (time layer, word index, bond
direction, bit slice) instead of consuming a sequential stream, so any
sample can be replayed on its own and results do not depend on how
samples are spread over workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

MASK32 = 0xFFFFFFFF
DEFAULT_PRECISION = 32
MAX_PRECISION = 63

# Counter layout: ((layer << WORD_BITS | word) << 1 | direction) << SLICE_BITS | pair.
# One Philox call yields two 64-bit words, so 32 pairs cover 64 bit slices.
WORD_BITS = 20
SLICE_BITS = 5
LAYER_SHIFT = WORD_BITS + 1 + SLICE_BITS

# High bits of the stream id separate the sampling engines.
STREAM_GROWTH = 0
STREAM_SPARSE = 1 << 56
STREAM_CROSSING = 2 << 56


class PreconditionError(ValueError):
    """Raised when an operation is called outside its domain."""


@dataclass(frozen=True)
class ModelParams:
    """Bond-occupation probability ``p`` in ``d`` spatial dimensions.

    ``p`` is stored as the dyadic fixed point ``p_fixed / 2**precision``;
    every sampler in the package draws bonds with exactly that probability.
    """

    d: int = 1
    p: float = 0.5
    precision: int = DEFAULT_PRECISION
    p_fixed: int = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise PreconditionError(f"d must be an integer >= 1, got {self.d!r}")
        if not (0.0 <= self.p <= 1.0):
            raise PreconditionError(f"p must lie in [0, 1], got {self.p!r}")
        if not (1 <= self.precision <= MAX_PRECISION):
            raise PreconditionError(
                f"precision must lie in [1, {MAX_PRECISION}], got {self.precision!r}")
        object.__setattr__(self, "p_fixed", fixed_point(self.p, self.precision))

    @property
    def p_hat(self) -> float:
        return self.p_fixed / 2.0 ** self.precision


def fixed_point(p: float, precision: int = DEFAULT_PRECISION) -> int:
    """Nearest dyadic numerator of ``p`` at ``precision`` bits (0..2**precision)."""
    return int(round(p * (1 << precision)))


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple
    t: int

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(int(v) for v in np.atleast_1d(self.x)))

    @property
    def d(self) -> int:
        return len(self.x)


def site_valid(point: SpaceTimePoint) -> bool:
    """True iff ``point`` lies on the space-time lattice (``|x|_1 + t`` even)."""
    if point.t < 0:
        return False
    return (sum(abs(v) for v in point.x) + point.t) % 2 == 0


def children(point: SpaceTimePoint) -> list[SpaceTimePoint]:
    """The ``2d`` sites reachable from ``point`` through a single bond."""
    if not site_valid(point):
        raise PreconditionError(f"{point} is not a lattice site")
    out = []
    for axis in range(point.d):
        for step in (-1, 1):
            x = list(point.x)
            x[axis] += step
            out.append(SpaceTimePoint(tuple(x), point.t + 1))
    return out


@dataclass(frozen=True)
class RngSpec:
    """Position in a counter-based stream: ``(seed, stream, counter)``."""

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream", "counter"):
            v = getattr(self, name)
            if not (0 <= v < 1 << 64):
                raise PreconditionError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def advance(self, k: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream, (self.counter + k) % (1 << 64))

    def words(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit words starting at this counter (two per Philox block)."""
        return philox_words(self.seed, self.stream, self.counter, n)


def layer_counter(layer: int) -> int:
    """First counter value reserved for time layer ``layer``."""
    return layer << LAYER_SHIFT


# --------------------------------------------------------------------------
# numba kernels

@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    prod = np.uint64(a) * np.uint64(b)
    return prod >> np.uint64(32), prod & np.uint64(MASK32)


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on 32-bit lanes held in uint64."""
    m = np.uint64(MASK32)
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for r in range(10):
        hi0, lo0 = _mulhilo(np.uint64(0xD2511F53), c0)
        hi1, lo1 = _mulhilo(np.uint64(0xCD9E8D57), c2)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + np.uint64(0x9E3779B9)) & m
        k1 = (k1 + np.uint64(0xBB67AE85)) & m
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def philox_pair(key, stream, counter):
    """Two 64-bit words for a 64-bit counter in a 64-bit stream."""
    m = np.uint64(MASK32)
    s32 = np.uint64(32)
    key = np.uint64(key)
    stream = np.uint64(stream)
    counter = np.uint64(counter)
    r0, r1, r2, r3 = philox4x32(counter & m, counter >> s32, stream & m, stream >> s32,
                                key & m, key >> s32)
    return r0 | (r1 << s32), r2 | (r3 << s32)


@nb.njit(cache=True)
def philox_fill(key, stream, counter, out):
    n = out.shape[0]
    i = 0
    c = np.uint64(counter)
    while i < n:
        a, b = philox_pair(key, stream, c)
        out[i] = a
        if i + 1 < n:
            out[i + 1] = b
        i += 2
        c += np.uint64(1)


@nb.njit(cache=True)
def mask_word(key, stream, base, pfix, prec, undecided):
    """One 64-lane Bernoulli(pfix / 2**prec) word, restricted to ``undecided`` lanes.

    Lane ``j`` holds the comparison ``U_j < pfix`` where the bits of ``U_j``
    (most significant first) are bit ``j`` of successive raw words.  Raw words
    sit at counters ``base, base+1, ...`` so the value of a lane depends only on
    its address, never on which other lanes were requested.
    """
    one = np.uint64(1)
    und = np.uint64(undecided)
    if und == 0 or pfix == 0:
        return np.uint64(0)
    if pfix >> np.uint64(prec) != 0:
        return und
    res = np.uint64(0)
    c = np.uint64(base)
    k = 0
    while k < prec:
        a, b = philox_pair(key, stream, c)
        c += one
        bit = (pfix >> np.uint64(prec - 1 - k)) & one
        if bit:
            res |= und & ~a
            und &= a
        else:
            und &= ~a
        k += 1
        if und == 0 or k == prec:
            break
        bit = (pfix >> np.uint64(prec - 1 - k)) & one
        if bit:
            res |= und & ~b
            und &= b
        else:
            und &= ~b
        k += 1
        if und == 0:
            break
    return res


@nb.njit(cache=True, inline="always")
def mask_base(layer, word, direction):
    return ((((np.uint64(layer) << np.uint64(WORD_BITS)) | np.uint64(word)) << np.uint64(1)
             | np.uint64(direction)) << np.uint64(SLICE_BITS))


@nb.njit(cache=True, inline="always")
def popcount(x):
    x = np.uint64(x)
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@nb.njit(cache=True, inline="always")
def lowest_bit_index(x):
    x = np.uint64(x)
    return popcount((x & (~x + np.uint64(1))) - np.uint64(1))


@nb.njit(cache=True)
def _mask_words(key, stream, counter, pfix, prec, nbits, out):
    nw = out.shape[0]
    for i in range(nw):
        und = np.uint64(0xFFFFFFFFFFFFFFFF)
        rem = nbits - 64 * i
        if rem < 64:
            und = (np.uint64(1) << np.uint64(rem)) - np.uint64(1)
        base = (np.uint64(counter) + np.uint64(i)) << np.uint64(SLICE_BITS)
        out[i] = mask_word(key, stream, base, pfix, prec, und)


# --------------------------------------------------------------------------
# python-facing wrappers

def philox_words(seed: int, stream: int, counter: int, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.uint64)
    philox_fill(np.uint64(seed), np.uint64(stream), np.uint64(counter), out)
    return out


def philox_block(counter: Sequence[int], key: Sequence[int]) -> tuple[int, int, int, int]:
    """Raw Philox4x32-10 on four 32-bit counter lanes and two key lanes."""
    r = philox4x32(*(np.uint64(c) for c in counter), *(np.uint64(k) for k in key))
    return tuple(int(v) for v in r)


def bernoulli_mask(p, nbits: int, rng: RngSpec,
                   precision: int = DEFAULT_PRECISION) -> tuple[np.ndarray, RngSpec]:
    """``nbits`` independent Bernoulli bits packed little-endian into uint64 words.

    ``p`` may be a float or a :class:`ModelParams`.  Each output word owns one
    counter slot (``2**SLICE_BITS`` Philox blocks), so the returned stream is
    advanced by ``ceil(nbits / 64)`` regardless of ``p``.
    """
    if nbits < 1:
        raise PreconditionError("nbits must be >= 1")
    if isinstance(p, ModelParams):
        pfix, precision = p.p_fixed, p.precision
    else:
        pfix = ModelParams(1, float(p), precision).p_fixed
    nw = (nbits + 63) // 64
    out = np.empty(nw, dtype=np.uint64)
    _mask_words(np.uint64(rng.seed), np.uint64(rng.stream), np.uint64(rng.counter),
                np.uint64(pfix), precision, nbits, out)
    return out, rng.advance(nw)


def unpack_bits(words: np.ndarray, nbits: int) -> np.ndarray:
    """Little-endian bit array of length ``nbits`` from uint64 words."""
    b = np.unpackbits(np.ascontiguousarray(words, dtype="<u8").view(np.uint8), bitorder="little")
    return b[:nbits].astype(bool)


def pack_bits(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=bool)
    nw = max(1, (len(bits) + 63) // 64)
    padded = np.zeros(nw * 64, dtype=np.uint8)
    padded[:len(bits)] = bits
    return np.packbits(padded, bitorder="little").view("<u8").astype(np.uint64)
