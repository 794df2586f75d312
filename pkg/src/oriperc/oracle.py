"""Exact small-scale values for ``d = 1``.

The frontier at time ``t`` (reachable set, bitmask over ``k = (x + t) / 2``)
is a Markov chain.  Given the frontier ``S``, the target ``k'`` of the next
row is fed by the bonds ``k' -> left`` and ``k' - 1 -> right`` only, and no
bond feeds two targets, so targets are independent with

    P(k' occupied | S) = 1 - (1 - p) ** ([k' in S] + [k' - 1 in S]).

Distributions are dense arrays over bitmasks in extended precision, or
dicts of :class:`fractions.Fraction` in exact mode.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .crossing import BoxSpec, enumerate_crossing_counts
from .model import PreconditionError

T_CAP = 10
T_CAP_EXACT = 6
PRUNE = 1e-15


@dataclass
class ExactStats:
    p: float
    t_max: int
    theta: np.ndarray
    chi: np.ndarray
    xi: np.ndarray
    tau: list            # tau[t][x + t] for x = -t..t
    pruned_mass: float = 0.0
    total_mass: list = field(default_factory=list)

    def tau_at(self, x: int, t: int):
        if abs(x) > t:
            return 0.0
        return self.tau[t][x + t]

    def to_dict(self) -> dict:
        return {"p": float(self.p), "t_max": self.t_max,
                "theta": [float(v) for v in self.theta],
                "chi": [float(v) for v in self.chi],
                "xi": [float(v) for v in self.xi],
                "tau": [[float(v) for v in row] for row in self.tau],
                "pruned_mass": float(self.pruned_mass)}


def _bits(nbits: int) -> np.ndarray:
    s = np.arange(1 << nbits)
    return ((s[:, None] >> np.arange(nbits)[None, :]) & 1).astype(bool)


def _step_dense(prob: np.ndarray, t: int, p):
    """Distribution of the frontier at ``t + 1`` from the one at ``t``."""
    one = np.longdouble(1)
    q = one - np.longdouble(p)
    b = _bits(t + 1).astype(np.int64)
    cnt = np.zeros((len(prob), t + 2), dtype=np.int64)
    cnt[:, :t + 1] += b
    cnt[:, 1:] += b
    occ = one - q ** cnt.astype(np.longdouble)
    nxt = prob[:, None].astype(np.longdouble)
    for k in range(t + 1, -1, -1):
        qk = occ[:, k][:, None]
        nxt = np.stack([nxt * (one - qk), nxt * qk], axis=2).reshape(len(prob), -1)
    return nxt.sum(axis=0)


def _step_exact(dist: dict, t: int, p: Fraction) -> dict:
    out: dict = {}
    for s, mass in dist.items():
        probs = []
        for k in range(t + 2):
            c = ((s >> k) & 1) + (((s >> (k - 1)) & 1) if k > 0 else 0)
            probs.append(1 - (1 - p) ** c)
        live = [k for k in range(t + 2) if probs[k] != 0]
        for outcome in itertools.product((0, 1), repeat=len(live)):
            m = mass
            s2 = 0
            for k, o in zip(live, outcome):
                m *= probs[k] if o else 1 - probs[k]
                s2 |= o << k
            if m:
                out[s2] = out.get(s2, 0) + m
    return out


def frontier_distributions(p, t_max: int, exact: bool = False, prune: float = PRUNE):
    """Frontier law at every ``t <= t_max``; dense arrays, or dicts when ``exact``."""
    if t_max > T_CAP:
        raise PreconditionError(f"t_max={t_max} exceeds the exact-enumeration cap {T_CAP}")
    if exact and t_max > T_CAP_EXACT:
        raise PreconditionError(f"rational mode is capped at t_max={T_CAP_EXACT}")
    pruned = 0.0
    if exact:
        pf = Fraction(p)
        dist = {1: Fraction(1)}
        out = [dist]
        for t in range(t_max):
            dist = _step_exact(dist, t, pf)
            out.append(dist)
        return out, pruned
    prob = np.array([0, 1], dtype=np.longdouble)
    out = [prob]
    for t in range(t_max):
        prob = _step_dense(prob, t, p)
        if prune > 0:
            small = (prob < prune) & (prob > 0)
            pruned += float(prob[small].sum())
            prob[small] = 0
        out.append(prob)
    return out, pruned


def exact_cluster_stats(p, t_max: int, exact: bool = False, prune: float = PRUNE) -> ExactStats:
    """Exact survival, two-point function, size and gyration radius for ``t <= t_max``."""
    dists, pruned = frontier_distributions(p, t_max, exact, prune)
    theta, chi, xi, tau, mass = [], [], [], [], []
    for t, dist in enumerate(dists):
        x = np.arange(-t, t + 1)
        if exact:
            tk = [sum((m for s, m in dist.items() if (s >> k) & 1), Fraction(0)) for k in range(t + 1)]
            th = 1 - dist.get(0, Fraction(0))
            total = sum(dist.values(), Fraction(0))
            row = [Fraction(0)] * (2 * t + 1)
        else:
            b = _bits(t + 1)
            tk = list((dist[:, None] * b).sum(axis=0))
            th = dist.sum() - dist[0]
            total = dist.sum()
            row = [np.longdouble(0)] * (2 * t + 1)
        for k, v in enumerate(tk):
            row[2 * k] = v
        c = sum(row[1:], row[0])
        m2 = sum((int(xx) ** 2 * v for xx, v in zip(x, row)), row[0] * 0)
        theta.append(th)
        chi.append(c)
        tau.append(row)
        mass.append(total)
        if exact:
            xi.append(math.sqrt(m2 / c) if c else float("nan"))
        else:
            xi.append(np.sqrt(m2 / c) if c > 0 else np.longdouble("nan"))
    dtype = object if exact else np.longdouble
    return ExactStats(p, t_max, np.array(theta, dtype=dtype), np.array(chi, dtype=dtype),
                      np.array(xi, dtype=np.longdouble if not exact else float), tau,
                      pruned, mass)


def exact_susceptibility(p, t_cut: int) -> float:
    st = exact_cluster_stats(p, t_cut)
    return float(sum(st.chi))


def exact_theta_two_layers(p):
    """Survival to ``t = 2`` by listing all 2**6 outcomes of the first two layers' bonds."""
    # bonds: o->-1, o->+1, -1->-2, -1->0, +1->0, +1->+2
    total = 0.0
    for bits in itertools.product((0, 1), repeat=6):
        a, b, c, d, e, f = bits
        alive = (a and (c or d)) or (b and (e or f))
        w = 1.0
        for v in bits:
            w *= p if v else 1 - p
        total += w * bool(alive)
    return total


# --------------------------------------------------------------------------
# crossing oracle

@dataclass
class ExactCrossing:
    box: BoxSpec
    p: float
    V: float
    H_lr: float
    H_rl: float
    counts: np.ndarray

    @property
    def n_bonds(self) -> int:
        return self.counts.shape[1] - 1


def crossing_polynomial_value(counts_row: np.ndarray, p) -> float:
    m = len(counts_row) - 1
    if isinstance(p, Fraction):
        return sum((int(c) * p ** k * (1 - p) ** (m - k) for k, c in enumerate(counts_row)), Fraction(0))
    pl = np.longdouble(p)
    k = np.arange(m + 1)
    return float((counts_row.astype(np.longdouble) * pl ** k * (1 - pl) ** (m - k)).sum())


def exact_crossing(box: BoxSpec, p) -> ExactCrossing:
    """Exact ``V_p`` and ``H_p`` for a box with at most 24 bonds.

    Sums over all bond configurations; every configuration is decided by the
    same reachability routine the Monte Carlo estimator uses.
    """
    counts = enumerate_crossing_counts(box)
    v, lr, rl = (crossing_polynomial_value(counts[i], p) for i in range(3))
    return ExactCrossing(box, p, v, lr, rl, counts)


# --------------------------------------------------------------------------
# reversibility

@dataclass
class ReversibilityResult:
    forward: float
    backward: float
    equal: bool


def backward_connection_probability(p, t: int, x: int = 0) -> float:
    """P(some site at time 0 is connected to ``(x, t)``), computed downwards in time.

    Works site by site: each site one layer further down joins the ancestor
    set iff one of its two upward bonds into the current set is open.  State
    sets are stored in coordinates relative to ``x`` (translation invariance).
    """
    if t > T_CAP:
        raise PreconditionError(f"t={t} exceeds the exact-enumeration cap {T_CAP}")
    q = 1.0 - p
    # ancestors at depth j: frozenset of offsets y - x, |offset| <= j
    dist = {frozenset([0]): 1.0}
    for j in range(t):
        new: dict = {}
        for anc, mass in dist.items():
            partial = {frozenset(): mass}
            for y in range(-j - 1, j + 2, 2):
                up = (y - 1 in anc) + (y + 1 in anc)
                joined = 1.0 - q ** up
                nxt: dict = {}
                for st, m in partial.items():
                    if joined > 0:
                        k = st | {y}
                        nxt[k] = nxt.get(k, 0.0) + m * joined
                    if joined < 1:
                        nxt[st] = nxt.get(st, 0.0) + m * (1.0 - joined)
                partial = nxt
            for st, m in partial.items():
                new[st] = new.get(st, 0.0) + m
        dist = new
    return 1.0 - dist.get(frozenset(), 0.0)


def reversibility_check(p, t: int, x: int = 0, tol: float = 1e-12) -> ReversibilityResult:
    forward = float(exact_cluster_stats(p, t, prune=0).theta[t])
    backward = backward_connection_probability(p, t, x)
    return ReversibilityResult(forward, backward, abs(forward - backward) <= tol)
