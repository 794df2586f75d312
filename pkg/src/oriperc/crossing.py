"""Box-crossing probabilities in ``d = 1``.

The box ``[0, w] x [0, t]`` holds the lattice sites ``(x, s)`` with
``0 <= x <= w``, ``0 <= s <= t`` and ``x + s`` even, and every bond whose
two endpoints lie in the box.  Rows are bitsets over ``x``.

Conventions for the discrete crossing events:

* vertical: an occupied directed path from some box site at ``s = 0`` to
  some box site at ``s = t``;
* left to right: a path of at least one bond from a site with
  ``x in {0, 1}`` (any time) to a site with ``x in {w-1, w}``; right to
  left is the mirror image.  Two-column sides make both parities present
  on each side.

Bond ``(x, s) -> (x -+ 1, s + 1)`` is occupied iff lane ``x`` of the mask
addressed by ``(s, x // 64, direction)`` is set, so configurations of
nested boxes drawn from the same stream are nested as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .growth import _set_threads
from .model import (
    STREAM_CROSSING,
    ModelParams,
    PreconditionError,
    RngSpec,
    mask_base,
    mask_word,
    popcount,
)

MAX_ORACLE_BONDS = 24
CHUNK = 1024
EVEN = np.uint64(0x5555555555555555)
ODD = np.uint64(0xAAAAAAAAAAAAAAAA)


@dataclass(frozen=True)
class BoxSpec:
    w: int
    t: int

    def __post_init__(self):
        if int(self.w) != self.w or int(self.t) != self.t or self.w < 1 or self.t < 1:
            raise PreconditionError(f"box needs integer w >= 1 and t >= 1, got ({self.w}, {self.t})")

    @property
    def nwords(self) -> int:
        return self.w // 64 + 1

    @classmethod
    def parse(cls, text: str) -> "BoxSpec":
        w, t = text.lower().split("x")
        return cls(int(w), int(t))


@dataclass
class BoxConfig:
    """Occupied bonds of a box: ``left[s]``/``right[s]`` bitsets over source ``x``."""

    box: BoxSpec
    left: np.ndarray
    right: np.ndarray

    @property
    def n_bonds(self) -> int:
        return bond_count(self.box)


@dataclass
class CrossingEstimate:
    box: BoxSpec
    p: float
    n: int
    v_count: int
    lr_count: int
    rl_count: int

    def _est(self, c):
        m = c / self.n
        return m, math.sqrt(m * (1 - m) / self.n)

    @property
    def V(self):
        return self._est(self.v_count)

    @property
    def H_lr(self):
        return self._est(self.lr_count)

    @property
    def H_rl(self):
        return self._est(self.rl_count)

    def merge(self, other: "CrossingEstimate") -> "CrossingEstimate":
        if (self.box, self.p) != (other.box, other.p):
            raise PreconditionError("cannot merge estimates for different boxes or p")
        return CrossingEstimate(self.box, self.p, self.n + other.n, self.v_count + other.v_count,
                                self.lr_count + other.lr_count, self.rl_count + other.rl_count)

    def to_dict(self) -> dict:
        v, ve = self.V
        h, he = self.H_lr
        r, re_ = self.H_rl
        return {"w": self.box.w, "t": self.box.t, "p": self.p, "V": v, "V_err": ve,
                "H_lr": h, "H_lr_err": he, "H_rl": r, "H_rl_err": re_, "n": self.n}


# --------------------------------------------------------------------------
# masks and the reachability core

@nb.njit(cache=True)
def _site_row(w, s, out):
    nw = out.shape[0]
    par = EVEN if s % 2 == 0 else ODD
    for i in range(nw):
        lim = w + 1 - 64 * i
        if lim >= 64:
            out[i] = par
        elif lim <= 0:
            out[i] = 0
        else:
            out[i] = par & ((np.uint64(1) << np.uint64(lim)) - np.uint64(1))


@nb.njit(cache=True)
def _bond_rows(w, s, site, lval, rval):
    _site_row(w, s, site)
    for i in range(site.shape[0]):
        lval[i] = site[i]
        rval[i] = site[i]
    lval[0] &= ~np.uint64(1)
    rval[w // 64] &= ~(np.uint64(1) << np.uint64(w % 64))


@nb.njit(cache=True)
def _cols(w, a, b, out):
    for i in range(out.shape[0]):
        out[i] = 0
    out[a // 64] |= np.uint64(1) << np.uint64(a % 64)
    out[b // 64] |= np.uint64(1) << np.uint64(b % 64)


@nb.njit(cache=True, inline="always")
def _advance(a, left, right, nxt):
    nw = a.shape[0]
    any_ = False
    for i in range(nw):
        x = a[i] & left[i]
        v = x >> np.uint64(1)
        if i + 1 < nw:
            v |= (a[i + 1] & left[i + 1]) << np.uint64(63)
        y = a[i] & right[i]
        v |= y << np.uint64(1)
        if i > 0:
            v |= (a[i - 1] & right[i - 1]) >> np.uint64(63)
        nxt[i] = v
        if v != 0:
            any_ = True
    return any_


@nb.njit(cache=True)
def crossings_core(left, right, w, t, scratch):
    """(vertical, left-to-right, right-to-left) for one box configuration.

    ``scratch`` is a (9, nwords) uint64 work array.
    """
    av = scratch[0]
    alr = scratch[1]
    arl = scratch[2]
    nxt = scratch[3]
    site = scratch[4]
    lcols = scratch[5]
    rcols = scratch[6]
    nw = av.shape[0]
    _cols(w, 0, min(1, w), lcols)
    _cols(w, max(w - 1, 0), w, rcols)
    _site_row(w, 0, site)
    v_alive = False
    for i in range(nw):
        av[i] = site[i]
        alr[i] = site[i] & lcols[i]
        arl[i] = site[i] & rcols[i]
        if av[i] != 0:
            v_alive = True
    lr = False
    rl = False
    for s in range(t):
        if not (v_alive or not lr or not rl):
            break
        if v_alive:
            v_alive = _advance(av, left[s], right[s], nxt)
            for i in range(nw):
                av[i] = nxt[i]
        _site_row(w, s + 1, site)
        if not lr:
            _advance(alr, left[s], right[s], nxt)
            for i in range(nw):
                if nxt[i] & rcols[i]:
                    lr = True
                alr[i] = nxt[i] | (site[i] & lcols[i])
        if not rl:
            _advance(arl, left[s], right[s], nxt)
            for i in range(nw):
                if nxt[i] & lcols[i]:
                    rl = True
                arl[i] = nxt[i] | (site[i] & rcols[i])
    return v_alive, lr, rl


@nb.njit(cache=True)
def _sample_config(key, stream, pfix, prec, w, t, left, right, scratch):
    site = scratch[4]
    lval = scratch[7]
    rval = scratch[8]
    for s in range(t):
        _bond_rows(w, s, site, lval, rval)
        for i in range(left.shape[1]):
            left[s, i] = mask_word(key, stream, mask_base(s, i, 0), pfix, prec, lval[i])
            right[s, i] = mask_word(key, stream, mask_base(s, i, 1), pfix, prec, rval[i])


@nb.njit(cache=True, parallel=True)
def _estimate(key, pfix, prec, w, t, n, first, chunk, counts):
    nchunks = counts.shape[0]
    nw = w // 64 + 1
    for c in nb.prange(nchunks):
        left = np.zeros((t, nw), dtype=np.uint64)
        right = np.zeros((t, nw), dtype=np.uint64)
        scratch = np.zeros((9, nw), dtype=np.uint64)
        s0 = first + c * chunk
        s1 = min(first + n, s0 + chunk)
        for s in range(s0, s1):
            stream = np.uint64(STREAM_CROSSING) + np.uint64(s)
            _sample_config(key, stream, pfix, prec, w, t, left, right, scratch)
            v, lr, rl = crossings_core(left, right, w, t, scratch)
            counts[c, 0] += v
            counts[c, 1] += lr
            counts[c, 2] += rl


@nb.njit(cache=True)
def _enumerate(w, t, bond_s, bond_dir, bond_x, counts):
    """Gray-code walk over all bond configurations; counts[k] per number of open bonds."""
    m = bond_s.shape[0]
    nw = w // 64 + 1
    left = np.zeros((t, nw), dtype=np.uint64)
    right = np.zeros((t, nw), dtype=np.uint64)
    scratch = np.zeros((9, nw), dtype=np.uint64)
    k = 0
    total = np.int64(1) << m
    for c in range(total):
        if c > 0:
            j = lowest_set(c)
            s = bond_s[j]
            x = bond_x[j]
            bit = np.uint64(1) << np.uint64(x % 64)
            if bond_dir[j] == 0:
                left[s, x // 64] ^= bit
                on = (left[s, x // 64] & bit) != 0
            else:
                right[s, x // 64] ^= bit
                on = (right[s, x // 64] & bit) != 0
            k += 1 if on else -1
        v, lr, rl = crossings_core(left, right, w, t, scratch)
        counts[0, k] += v
        counts[1, k] += lr
        counts[2, k] += rl


@nb.njit(cache=True, inline="always")
def lowest_set(c):
    j = 0
    while (c >> j) & 1 == 0:
        j += 1
    return j


# --------------------------------------------------------------------------
# python API

def box_bonds(box: BoxSpec) -> list[tuple[int, int, int]]:
    """In-box bonds as ``(s, direction, x)``; direction 0 goes to ``x - 1``."""
    out = []
    for s in range(box.t):
        for x in range(s % 2, box.w + 1, 2):
            if x - 1 >= 0:
                out.append((s, 0, x))
            if x + 1 <= box.w:
                out.append((s, 1, x))
    return out


def bond_count(box: BoxSpec) -> int:
    return len(box_bonds(box))


def sample_box_config(box: BoxSpec, params: ModelParams, rng: RngSpec) -> BoxConfig:
    """Every in-box bond open independently with probability ``params.p_hat``.

    Only ``(seed, stream)`` of ``rng`` are used; bond addresses fix the counters.
    """
    nw = box.nwords
    left = np.zeros((box.t, nw), dtype=np.uint64)
    right = np.zeros((box.t, nw), dtype=np.uint64)
    scratch = np.zeros((9, nw), dtype=np.uint64)
    _sample_config(np.uint64(rng.seed), np.uint64(rng.stream), np.uint64(params.p_fixed),
                   params.precision, box.w, box.t, left, right, scratch)
    return BoxConfig(box, left, right)


def config_from_bonds(box: BoxSpec, open_bonds) -> BoxConfig:
    nw = box.nwords
    left = np.zeros((box.t, nw), dtype=np.uint64)
    right = np.zeros((box.t, nw), dtype=np.uint64)
    for s, direction, x in open_bonds:
        arr = left if direction == 0 else right
        arr[s, x // 64] |= np.uint64(1) << np.uint64(x % 64)
    return BoxConfig(box, left, right)


def crossings(config: BoxConfig) -> tuple[bool, bool, bool]:
    box = config.box
    scratch = np.zeros((9, box.nwords), dtype=np.uint64)
    v, lr, rl = crossings_core(config.left, config.right, box.w, box.t, scratch)
    return bool(v), bool(lr), bool(rl)


def estimate_crossing(box: BoxSpec, p, n: int, seed: int, *, first_stream: int = 0,
                      threads: int | None = None) -> CrossingEstimate:
    """Monte Carlo crossing frequencies over ``n`` independent configurations."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    params = p if isinstance(p, ModelParams) else ModelParams(1, float(p))
    _set_threads(threads)
    nchunks = (n + CHUNK - 1) // CHUNK
    counts = np.zeros((nchunks, 3), dtype=np.int64)
    _estimate(np.uint64(seed), np.uint64(params.p_fixed), params.precision, box.w, box.t,
              n, first_stream, CHUNK, counts)
    tot = counts.sum(axis=0)
    return CrossingEstimate(box, params.p_hat, n, int(tot[0]), int(tot[1]), int(tot[2]))


def enumerate_crossing_counts(box: BoxSpec) -> np.ndarray:
    """``counts[e, k]``: configurations with ``k`` open bonds realising event ``e``.

    Events are (vertical, left-to-right, right-to-left).  Decisions go through
    :func:`crossings_core`, the same code path as the Monte Carlo estimator.
    """
    bonds = box_bonds(box)
    m = len(bonds)
    if m > MAX_ORACLE_BONDS:
        raise PreconditionError(f"box {box.w}x{box.t} has {m} bonds; exact enumeration is capped at "
                                f"{MAX_ORACLE_BONDS}")
    arr = np.array(bonds, dtype=np.int64).reshape(-1, 3)
    counts = np.zeros((3, m + 1), dtype=np.int64)
    _enumerate(box.w, box.t, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), counts)
    return counts


class WidthNotFound(RuntimeError):
    """No width satisfies the crossing band at the requested statistics."""

    def __init__(self, msg, scanned):
        super().__init__(msg)
        self.scanned = scanned


@dataclass
class WidthResult:
    t: int
    w: int
    lower: CrossingEstimate   # box (w, 3t)
    upper: CrossingEstimate   # box (3w, t)
    scanned: list


def find_width(t: int, p, band=(0.1, 0.9), n: int = 10000, seed: int = 0, *,
               sigmas: float = 3.0, w_max: int | None = None,
               threads: int | None = None) -> WidthResult:
    """Smallest ``w`` with ``V(w, 3t) >= lo`` and ``V(3w, t) <= hi`` at ``sigmas`` confidence.

    Doubling then bisection on the first condition (``V`` grows with ``w``);
    the second condition is then checked at that ``w``.
    """
    lo, hi = band
    if not (0 < lo < hi < 1):
        raise PreconditionError("band needs 0 < lo < hi < 1")
    if t < 1:
        raise PreconditionError("t must be >= 1")
    w_max = w_max or 8 * t + 8
    scanned = []
    cache = {}

    def lower(w):
        if w not in cache:
            est = estimate_crossing(BoxSpec(w, 3 * t), p, n, seed, threads=threads)
            v, e = est.V
            cache[w] = (est, v - sigmas * e >= lo)
            scanned.append((w, 3 * t, v, e))
        return cache[w]

    w = 1
    while not lower(w)[1]:
        if w >= w_max:
            raise WidthNotFound(f"V(w, {3 * t}) stays below {lo} for w <= {w_max}", scanned)
        w = min(2 * w, w_max)
    bad = w // 2 if w > 1 else 0
    good = w
    while good - bad > 1:
        mid = (good + bad) // 2
        if lower(mid)[1]:
            good = mid
        else:
            bad = mid
    up = estimate_crossing(BoxSpec(3 * good, t), p, n, seed, threads=threads)
    v, e = up.V
    scanned.append((3 * good, t, v, e))
    if v + sigmas * e > hi:
        raise WidthNotFound(f"at w={good}: V({3 * good}, {t}) = {v:.4f} +- {e:.4f} is not below {hi}",
                            scanned)
    return WidthResult(t, good, lower(good)[0], up, scanned)


class BracketError(RuntimeError):
    pass


@dataclass
class PcResult:
    p: float
    interval: tuple
    estimate: CrossingEstimate
    steps: int


def find_pc(t: int, aspect: float = 1.0, target: float = 0.5, tol: float = 1e-3,
            n: int = 10000, seed: int = 0, *, threads: int | None = None) -> PcResult:
    """Bisect ``p`` on ``V_p(round(aspect t), t) = target``.

    A fixed seed couples all evaluations, so the estimated curve is
    nondecreasing in ``p`` sample by sample.
    """
    if not 0 < target < 1:
        raise PreconditionError("target must lie in (0, 1)")
    w = int(round(aspect * t))
    if w < 1 or t < 1:
        raise PreconditionError("need round(aspect * t) >= 1 and t >= 1")
    box = BoxSpec(w, t)

    def v_at(p):
        return estimate_crossing(box, p, n, seed, threads=threads)

    lo, hi = 0.0, 1.0
    if v_at(lo).V[0] > target or v_at(hi).V[0] < target:
        raise BracketError("crossing curve does not bracket the target on [0, 1]")
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if v_at(mid).V[0] < target:
            lo = mid
        else:
            hi = mid
        steps += 1
    p = 0.5 * (lo + hi)
    return PcResult(p, (lo, hi), v_at(p), steps)
