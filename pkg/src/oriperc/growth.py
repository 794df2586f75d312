"""Forward growth of the cluster of the space-time origin.

Two engines produce the same law:

* a bit-parallel kernel for ``d = 1``.  Sites of the row at time ``t`` are
  indexed by ``k = (x + t) / 2`` in ``0..t``; the child ``x - 1`` of ``k``
  keeps index ``k`` and the child ``x + 1`` moves to ``k + 1``, so one step
  is ``next = (cur & L) | ((cur & R) << 1)`` with fresh Bernoulli masks.
* a sparse coordinate-set path for any ``d``.

Every bond is examined at most once by forward growth from a single
source, so sampling bonds lazily is exact.  The two engines address their
random words differently and agree only in distribution.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .model import (
    STREAM_GROWTH,
    STREAM_SPARSE,
    ModelParams,
    PreconditionError,
    RngSpec,
    layer_counter,
    lowest_bit_index,
    mask_base,
    mask_word,
    pack_bits,
    philox_words,
    popcount,
    unpack_bits,
)

nb.config.THREADING_LAYER = "workqueue"

CHUNK = 4096
LIMB = 24
MAX_T = 1 << 15

# field layout of the per-chunk integer accumulators
F_SURV, F_N, F_N2, F_M = 0, 1, 2, 3
F_M2 = 4      # 3 limbs
F_NM = 7      # 3 limbs
F_C2 = 10     # 3 limbs, direct part
F_C2T = 13    # 3 limbs, constant tail after extinction
N_FIELDS = 16


def threads_default() -> int:
    env = os.environ.get("ORIPERC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class FrontierRow:
    """Reachable set at time ``t``.

    For ``d = 1`` ``occupied`` holds uint64 words over ``k = (x + t) / 2``;
    otherwise it is an ``(m, d)`` integer array of sorted unique sites.
    """

    t: int
    occupied: np.ndarray
    d: int = 1

    @classmethod
    def origin(cls, d: int = 1) -> "FrontierRow":
        if d == 1:
            return cls(0, pack_bits([True]), 1)
        return cls(0, np.zeros((1, d), dtype=np.int64), d)

    def sites(self) -> np.ndarray:
        if self.d == 1:
            k = np.flatnonzero(unpack_bits(self.occupied, len(self.occupied) * 64))
            return 2 * k - self.t
        return self.occupied

    def __len__(self):
        if self.d == 1:
            return int(unpack_bits(self.occupied, 64 * len(self.occupied)).sum())
        return len(self.occupied)


@dataclass
class TrajectoryStats:
    survival: np.ndarray
    n_sites: np.ndarray
    second_moment: np.ndarray
    extinction_time: int


@dataclass
class AggregateStats:
    """Exact per-time sums over Monte Carlo samples.

    All arrays hold Python integers (object dtype) so that merging is exact,
    associative and commutative.  ``sum_c2`` is the sum over samples of the
    squared cumulative size ``sum_{s<=t} N_s``, used for the error of the
    truncated susceptibility.
    """

    d: int
    p: float
    t_max: int
    n: int
    surv: np.ndarray
    sum_n: np.ndarray
    sum_n2: np.ndarray
    sum_m: np.ndarray
    sum_m2: np.ndarray
    sum_nm: np.ndarray
    sum_c2: np.ndarray
    precision: int = 32

    FIELDS = ("surv", "sum_n", "sum_n2", "sum_m", "sum_m2", "sum_nm", "sum_c2")

    @classmethod
    def empty(cls, d, p, t_max, precision=32) -> "AggregateStats":
        z = lambda: np.array([0] * (t_max + 1), dtype=object)  # noqa: E731
        return cls(d, p, t_max, 0, *(z() for _ in cls.FIELDS), precision=precision)

    def merge(self, other: "AggregateStats") -> "AggregateStats":
        if (self.d, self.p, self.t_max, self.precision) != (other.d, other.p, other.t_max, other.precision):
            raise PreconditionError("cannot merge aggregates with different (d, p, t_max, precision)")
        return AggregateStats(self.d, self.p, self.t_max, self.n + other.n,
                              *(getattr(self, f) + getattr(other, f) for f in self.FIELDS),
                              precision=self.precision)

    __add__ = merge

    def __eq__(self, other):
        if not isinstance(other, AggregateStats):
            return NotImplemented
        return (self.d, self.p, self.t_max, self.n, self.precision) == \
            (other.d, other.p, other.t_max, other.n, other.precision) and \
            all(list(getattr(self, f)) == list(getattr(other, f)) for f in self.FIELDS)

    def add_sample(self, traj: TrajectoryStats):
        """Accumulate one trajectory (pure-python path)."""
        c = 0
        for t in range(self.t_max + 1):
            nt = int(traj.n_sites[t])
            mt = int(traj.second_moment[t])
            c += nt
            self.surv[t] += int(traj.survival[t])
            self.sum_n[t] += nt
            self.sum_n2[t] += nt * nt
            self.sum_m[t] += mt
            self.sum_m2[t] += mt * mt
            self.sum_nm[t] += nt * mt
            self.sum_c2[t] += c * c
        self.n += 1

    def to_dict(self) -> dict:
        out = {"d": self.d, "p": self.p, "precision": self.precision,
               "t_max": self.t_max, "n": self.n}
        for f in self.FIELDS:
            out[f] = [int(v) for v in getattr(self, f)]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AggregateStats":
        arrays = [np.array([int(v) for v in data[f]], dtype=object) for f in cls.FIELDS]
        return cls(int(data["d"]), float(data["p"]), int(data["t_max"]), int(data["n"]),
                   *arrays, precision=int(data.get("precision", 32)))


# --------------------------------------------------------------------------
# d = 1 bit-parallel kernel

@nb.njit(cache=True)
def _step_words(key, stream, pfix, prec, t, cur, nxt, lo, hi):
    """Advance words ``lo..hi`` of ``cur`` (time t) into ``nxt``; return new (lo, hi)."""
    for i in range(lo, hi + 2):
        nxt[i] = 0
    for i in range(lo, hi + 1):
        c = cur[i]
        if c == 0:
            continue
        left = mask_word(key, stream, mask_base(t, i, 0), pfix, prec, c)
        right = mask_word(key, stream, mask_base(t, i, 1), pfix, prec, c)
        a = c & left
        b = c & right
        nxt[i] |= a | (b << np.uint64(1))
        nxt[i + 1] |= b >> np.uint64(63)
    for i in range(lo, hi + 1):
        cur[i] = 0
    new_lo = -1
    new_hi = -1
    for i in range(lo, hi + 2):
        if nxt[i] != 0:
            if new_lo < 0:
                new_lo = i
            new_hi = i
    return new_lo, new_hi


@nb.njit(cache=True)
def _row_moments(t, row, lo, hi):
    """Site count and sum of x^2 over the row (x = 2k - t)."""
    n = 0
    s1 = 0
    s2 = 0
    for i in range(lo, hi + 1):
        w = row[i]
        while w != 0:
            k = 64 * i + lowest_bit_index(w)
            n += 1
            s1 += k
            s2 += k * k
            w &= w - np.uint64(1)
    return n, 4 * s2 - 4 * t * s1 + t * t * n


@nb.njit(cache=True)
def _add_hits(row, lo, hi, hits):
    for i in range(lo, hi + 1):
        w = row[i]
        while w != 0:
            hits[64 * i + lowest_bit_index(w)] += 1
            w &= w - np.uint64(1)


@nb.njit(cache=True)
def _grow_one_d1(key, stream, pfix, prec, t_max, cur, nxt, n_out, m_out, prof_slot, hits):
    """Grow one cluster; fills n_out/m_out up to extinction and returns the extinction time.

    ``prof_slot[t] >= 0`` marks times whose row is added into ``hits[prof_slot[t]]``.
    Buffers ``cur``/``nxt`` must be zero on entry and are left zero.
    """
    cur[0] = np.uint64(1)
    lo = 0
    hi = 0
    n_out[0] = 1
    m_out[0] = 0
    if prof_slot[0] >= 0:
        hits[prof_slot[0], 0] += 1
    t = 0
    while t < t_max:
        lo, hi = _step_words(key, stream, pfix, prec, t, cur, nxt, lo, hi)
        t += 1
        cur, nxt = nxt, cur
        if lo < 0:
            for i in range(cur.shape[0]):
                cur[i] = 0
            return t
        n, m = _row_moments(t, cur, lo, hi)
        n_out[t] = n
        m_out[t] = m
        if prof_slot[t] >= 0:
            _add_hits(cur, lo, hi, hits[prof_slot[t]])
    for i in range(lo, hi + 1):
        cur[i] = 0
    return t_max + 1


@nb.njit(cache=True, inline="always")
def _acc_prod(acc, f, t, u, v):
    mask = np.int64((1 << LIMB) - 1)
    a1 = u >> LIMB
    b1 = u & mask
    a2 = v >> LIMB
    b2 = v & mask
    acc[f, t] += a1 * a2
    acc[f + 1, t] += a1 * b2 + a2 * b1
    acc[f + 2, t] += b1 * b2


@nb.njit(cache=True)
def _run_chunk(key, stream0, pfix, prec, t_max, s_begin, s_end, acc, prof_slot, hits):
    nw = (t_max + 1) // 64 + 3
    cur = np.zeros(nw, dtype=np.uint64)
    nxt = np.zeros(nw, dtype=np.uint64)
    n_out = np.zeros(t_max + 1, dtype=np.int64)
    m_out = np.zeros(t_max + 1, dtype=np.int64)
    for s in range(s_begin, s_end):
        ext = _grow_one_d1(key, np.uint64(stream0) + np.uint64(s), pfix, prec, t_max,
                           cur, nxt, n_out, m_out, prof_slot, hits)
        last = min(ext, t_max + 1)
        c = 0
        for t in range(last):
            n = n_out[t]
            m = m_out[t]
            c += n
            acc[F_SURV, t] += 1
            acc[F_N, t] += n
            acc[F_N2, t] += n * n
            acc[F_M, t] += m
            _acc_prod(acc, F_M2, t, m, m)
            _acc_prod(acc, F_NM, t, n, m)
            _acc_prod(acc, F_C2, t, c, c)
        if last <= t_max:
            _acc_prod(acc, F_C2T, last, c, c)


@nb.njit(cache=True, parallel=True)
def _run_ensemble_d1(key, stream0, pfix, prec, t_max, first, n, chunk, acc, prof_slot, hits):
    nchunks = acc.shape[0]
    for c in nb.prange(nchunks):
        s0 = first + c * chunk
        s1 = min(first + n, s0 + chunk)
        _run_chunk(key, stream0, pfix, prec, t_max, s0, s1, acc[c], prof_slot, hits[c])


def _combine(limbs: np.ndarray) -> np.ndarray:
    hi, mid, lo = (limbs[i].astype(object) for i in range(3))
    return hi * (1 << (2 * LIMB)) + mid * (1 << LIMB) + lo


def _acc_to_aggregate(params: ModelParams, t_max: int, n: int, acc: np.ndarray) -> AggregateStats:
    tot = acc.astype(object).sum(axis=0)
    c2_tail = np.cumsum(_combine(tot[F_C2T:F_C2T + 3]))
    return AggregateStats(
        params.d, params.p_hat, t_max, n,
        tot[F_SURV], tot[F_N], tot[F_N2], tot[F_M],
        _combine(tot[F_M2:F_M2 + 3]), _combine(tot[F_NM:F_NM + 3]),
        _combine(tot[F_C2:F_C2 + 3]) + c2_tail,
        precision=params.precision)


def _check_t(t_max):
    if t_max < 0:
        raise PreconditionError("t_max must be >= 0")
    if t_max > MAX_T:
        raise PreconditionError(f"t_max above {MAX_T} is not supported")


def _set_threads(threads):
    n = threads or threads_default()
    nb.set_num_threads(max(1, min(n, nb.config.NUMBA_NUM_THREADS)))


def _ensemble_d1(params, t_max, n, seed, first, threads, profile_times):
    _check_t(t_max)
    _set_threads(threads)
    nchunks = (n + CHUNK - 1) // CHUNK
    acc = np.zeros((nchunks, N_FIELDS, t_max + 1), dtype=np.int64)
    slot = np.full(t_max + 1, -1, dtype=np.int64)
    for j, tp in enumerate(profile_times):
        slot[tp] = j
    width = t_max + 1 if len(profile_times) else 1
    hits = np.zeros((nchunks, max(1, len(profile_times)), width), dtype=np.int64)
    _run_ensemble_d1(np.uint64(seed), np.uint64(STREAM_GROWTH), np.uint64(params.p_fixed),
                     params.precision, t_max, first, n, CHUNK, acc, slot, hits)
    return _acc_to_aggregate(params, t_max, n, acc), hits.sum(axis=0)


# --------------------------------------------------------------------------
# sparse generic-d path

def _unit_offsets(d):
    off = np.zeros((2 * d, d), dtype=np.int64)
    for a in range(d):
        off[2 * a, a] = -1
        off[2 * a + 1, a] = 1
    return off


def _step_sparse(coords, t, params: ModelParams, rng: RngSpec):
    m, d = coords.shape
    if m == 0:
        return coords
    nbonds = m * 2 * d
    words = philox_words(rng.seed, rng.stream, layer_counter(t), nbonds)
    if params.p_fixed >= 1 << params.precision:
        occ = np.ones(nbonds, dtype=bool)
    else:
        occ = (words >> np.uint64(64 - params.precision)) < np.uint64(params.p_fixed)
    targets = (coords[:, None, :] + _unit_offsets(d)[None]).reshape(-1, d)[occ]
    if len(targets) == 0:
        return np.zeros((0, d), dtype=np.int64)
    return np.unique(targets, axis=0)


def step_frontier(row: FrontierRow, params: ModelParams, rng: RngSpec) -> FrontierRow:
    """One time step of forward growth.

    ``rng`` supplies ``(seed, stream)``; the counter position is derived from
    ``row.t`` so that a step can be replayed on its own.
    """
    if row.d == 1:
        cur = np.zeros(len(row.occupied) + 2, dtype=np.uint64)
        cur[:len(row.occupied)] = row.occupied
        nxt = np.zeros_like(cur)
        nz = np.flatnonzero(cur)
        if len(nz) == 0:
            return FrontierRow(row.t + 1, np.zeros(1, dtype=np.uint64), 1)
        _step_words(np.uint64(rng.seed), np.uint64(rng.stream), np.uint64(params.p_fixed),
                    params.precision, row.t, cur, nxt, int(nz[0]), int(nz[-1]))
        need = (row.t + 2 + 63) // 64
        return FrontierRow(row.t + 1, nxt[:need].copy(), 1)
    return FrontierRow(row.t + 1, _step_sparse(row.occupied, row.t, params, rng), row.d)


def _grow_sparse(params: ModelParams, t_max: int, rng: RngSpec) -> TrajectoryStats:
    d = params.d
    coords = np.zeros((1, d), dtype=np.int64)
    n_sites = np.zeros(t_max + 1, dtype=np.int64)
    moment = np.zeros(t_max + 1, dtype=np.int64)
    n_sites[0] = 1
    ext = t_max + 1
    for t in range(t_max):
        coords = _step_sparse(coords, t, params, rng)
        if len(coords) == 0:
            ext = t + 1
            break
        n_sites[t + 1] = len(coords)
        moment[t + 1] = int((coords * coords).sum())
    return TrajectoryStats(n_sites > 0, n_sites, moment, ext)


def grow_cluster(params: ModelParams, t_max: int, rng: RngSpec, kernel: str = "auto") -> TrajectoryStats:
    """Grow the cluster of the origin up to ``t_max`` (stopping at extinction)."""
    _check_t(t_max)
    if _use_bitset(params, kernel):
        nw = (t_max + 1) // 64 + 3
        cur = np.zeros(nw, dtype=np.uint64)
        nxt = np.zeros(nw, dtype=np.uint64)
        n_out = np.zeros(t_max + 1, dtype=np.int64)
        m_out = np.zeros(t_max + 1, dtype=np.int64)
        slot = np.full(t_max + 1, -1, dtype=np.int64)
        hits = np.zeros((1, 1), dtype=np.int64)
        ext = _grow_one_d1(np.uint64(rng.seed), np.uint64(rng.stream), np.uint64(params.p_fixed),
                           params.precision, t_max, cur, nxt, n_out, m_out, slot, hits)
        return TrajectoryStats(n_out > 0, n_out, m_out, int(ext))
    return _grow_sparse(params, t_max, rng)


def _use_bitset(params, kernel):
    if kernel not in ("auto", "bitset", "sparse"):
        raise PreconditionError(f"unknown kernel {kernel!r}")
    if kernel == "bitset" and params.d != 1:
        raise PreconditionError("the bit-parallel kernel requires d = 1")
    return params.d == 1 and kernel != "sparse"


def run_ensemble(params: ModelParams, t_max: int, n: int, seed: int, *,
                 first_stream: int = 0, threads: int | None = None,
                 kernel: str = "auto") -> AggregateStats:
    """Merge ``n`` independent growths with stream ids ``first_stream .. first_stream + n - 1``.

    The result is exact integer sums, identical for any thread count.
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if _use_bitset(params, kernel):
        agg, _ = _ensemble_d1(params, t_max, n, seed, first_stream, threads, ())
        return agg
    _check_t(t_max)
    agg = AggregateStats.empty(params.d, params.p_hat, t_max, params.precision)
    for s in range(first_stream, first_stream + n):
        try:
            traj = _grow_sparse(params, t_max, RngSpec(seed, STREAM_SPARSE + s))
        except MemoryError as exc:
            raise MemoryError(f"resource exhaustion after {s - first_stream} completed samples") from exc
        agg.add_sample(traj)
    return agg


def run_with_profiles(params: ModelParams, t_max: int, n: int, seed: int, profile_times,
                      *, first_stream: int = 0, threads: int | None = None):
    """Ensemble plus per-site hit counts at ``profile_times`` (``d = 1`` only).

    Returns ``(aggregate, hits)`` where ``hits[j, k]`` counts samples whose row
    at ``profile_times[j]`` contains index ``k`` (site ``x = 2k - t``).
    """
    if params.d != 1:
        raise PreconditionError("two-point profiles are implemented for d = 1")
    times = [int(t) for t in profile_times]
    if any(t < 0 or t > t_max for t in times):
        raise PreconditionError("profile times must lie in [0, t_max]")
    return _ensemble_d1(params, t_max, n, seed, first_stream, threads, times)


def coupled_rows(p_low: float, p_high: float, t_max: int, rng: RngSpec, precision: int = 32):
    """Frontiers at two probabilities driven by the same uniforms (test helper).

    Bond masks are thresholds of address-keyed uniforms, so growth at the
    lower probability stays inside growth at the higher one.
    """
    lo = ModelParams(1, p_low, precision)
    hi = ModelParams(1, p_high, precision)
    a = FrontierRow.origin()
    b = FrontierRow.origin()
    rows = [(a, b)]
    for _ in range(t_max):
        a = step_frontier(a, lo, rng)
        b = step_frontier(b, hi, rng)
        rows.append((a, b))
    return rows
