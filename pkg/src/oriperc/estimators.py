"""Point estimates with standard errors for the cluster observables.

All estimators read the exact integer sums of :class:`AggregateStats`.
Errors are first order (delta method) throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .growth import AggregateStats, run_with_profiles
from .model import ModelParams, PreconditionError

USABLE_SIGMAS = 5.0


@dataclass
class SeriesEstimate:
    """Estimate, standard error and effective sample count per time ``t = 0..t_max``.

    ``value`` is NaN where the quantity is undefined (e.g. ``xi`` with no sites).
    """

    name: str
    value: np.ndarray
    stderr: np.ndarray
    n_eff: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.value))

    def usable(self, sigmas: float = USABLE_SIGMAS) -> np.ndarray:
        v = self.value
        ok = np.isfinite(v) & (v > 0)
        return ok & (v > sigmas * self.stderr)

    def to_dict(self) -> dict:
        return {"name": self.name,
                "value": [_num(v) for v in self.value],
                "stderr": [_num(v) for v in self.stderr],
                "n_eff": [int(v) for v in self.n_eff]}

    @classmethod
    def from_dict(cls, data: dict) -> "SeriesEstimate":
        f = lambda k: np.array([np.nan if v is None else float(v) for v in data[k]])  # noqa: E731
        return cls(data["name"], f("value"), f("stderr"), np.array(data["n_eff"], dtype=np.int64))


def _num(v):
    v = float(v)
    return None if not math.isfinite(v) else v


def _means(agg: AggregateStats, field: str) -> np.ndarray:
    # exact integer sums -> float means without intermediate overflow
    return np.array([float(v) / agg.n for v in getattr(agg, field)])


def theta_series(agg: AggregateStats) -> SeriesEstimate:
    """Survival probability up to time ``t`` with binomial errors."""
    if agg.n < 1:
        raise PreconditionError("aggregate has no samples")
    th = _means(agg, "surv")
    se = np.sqrt(np.clip(th * (1 - th), 0, None) / agg.n)
    return SeriesEstimate("theta", th, se, np.full(len(th), agg.n))


def _variance(agg, sum_sq, mean):
    # sample variance of the per-sample quantity, from exact sums
    n = agg.n
    out = np.empty(len(mean))
    for i, (s2, m) in enumerate(zip(sum_sq, mean)):
        out[i] = max(float(s2) / n - m * m, 0.0)
    return out * n / max(n - 1, 1)


def chi_xi_series(agg: AggregateStats) -> tuple[SeriesEstimate, SeriesEstimate]:
    """Expected cluster size at time ``t`` and its gyration radius.

    ``xi = sqrt(E[sum |x|^2] / E[N])`` is a ratio of means; its error uses the
    covariance of numerator and denominator over samples.
    """
    if agg.n < 1:
        raise PreconditionError("aggregate has no samples")
    n = agg.n
    chi = _means(agg, "sum_n")
    mom = _means(agg, "sum_m")
    var_n = _variance(agg, agg.sum_n2, chi)
    var_m = _variance(agg, agg.sum_m2, mom)
    cov = np.array([float(s) / n for s in agg.sum_nm]) - chi * mom
    cov *= n / max(n - 1, 1)
    chi_se = np.sqrt(var_n / n)

    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(chi > 0, mom / chi, np.nan)
        xi = np.sqrt(r)
        # var(R) for R = M/N to first order, then xi = sqrt(R)
        var_r = (var_m - 2 * r * cov + r * r * var_n) / (chi * chi * n)
        var_r = np.clip(var_r, 0, None)
        xi_se = np.where(xi > 0, np.sqrt(var_r) / (2 * xi), 0.0)
    xi_se = np.where(np.isfinite(xi), xi_se, np.nan)
    surv = np.array([int(v) for v in agg.surv])
    return (SeriesEstimate("chi", chi, chi_se, np.full(len(chi), n)),
            SeriesEstimate("xi", xi, xi_se, surv))


@dataclass
class TwoPointProfile:
    """Estimate of ``tau(x, t)`` for ``x = -t..t`` at fixed ``t``."""

    t: int
    x: np.ndarray
    tau: np.ndarray
    stderr: np.ndarray
    n: int
    hits: np.ndarray | None = None

    @property
    def chi(self) -> float:
        if self.hits is not None:
            return float(int(self.hits.sum())) / self.n
        return float(self.tau.sum())

    def at(self, x: int) -> float:
        if abs(x) > self.t:
            return 0.0
        return float(self.tau[x + self.t])

    def to_dict(self) -> dict:
        return {"t": self.t, "n": self.n, "x": [int(v) for v in self.x],
                "tau": [float(v) for v in self.tau], "stderr": [float(v) for v in self.stderr]}

    @classmethod
    def from_dict(cls, data: dict) -> "TwoPointProfile":
        return cls(int(data["t"]), np.array(data["x"], dtype=np.int64),
                   np.array(data["tau"], dtype=float), np.array(data["stderr"], dtype=float),
                   int(data["n"]))


def profile_from_hits(t: int, hits_k: np.ndarray, n: int) -> TwoPointProfile:
    """Spread per-index hit counts (``k = (x+t)/2``) over ``x = -t..t``."""
    x = np.arange(-t, t + 1)
    hits = np.zeros(2 * t + 1, dtype=np.int64)
    hits[0::2] = hits_k[:t + 1]
    tau = hits / n
    se = np.sqrt(tau * (1 - tau) / n)
    return TwoPointProfile(t, x, tau, se, n, hits)


def two_point_profile(params: ModelParams, t: int, n: int, seed: int,
                      threads: int | None = None) -> TwoPointProfile:
    if n < 1 or t < 0:
        raise PreconditionError("need n >= 1 and t >= 0")
    _, hits = run_with_profiles(params, t, n, seed, [t], threads=threads)
    return profile_from_hits(t, hits[0], n)


def two_point_profiles(params: ModelParams, t_max: int, n: int, seed: int,
                       threads: int | None = None):
    """Profiles at every ``t <= t_max`` from one sample set, plus its aggregate."""
    agg, hits = run_with_profiles(params, t_max, n, seed, range(t_max + 1), threads=threads)
    return agg, [profile_from_hits(t, hits[t], n) for t in range(t_max + 1)]


def susceptibility(agg: AggregateStats, t_cut: int) -> tuple[float, float]:
    """``sum_{t<=t_cut} chi_t`` and its error from per-sample cumulative sizes."""
    if not 0 <= t_cut <= agg.t_max:
        raise PreconditionError(f"t_cut must lie in [0, {agg.t_max}]")
    n = agg.n
    total = int(sum(agg.sum_n[:t_cut + 1]))
    mean = total / n
    var = max(int(agg.sum_c2[t_cut]) / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)


@dataclass
class ZetaReport:
    """Relaxation-time proxies ``-t / log theta_t`` and ``-t / log chi_t``.

    Entries whose estimate is not usable are NaN and flagged False.
    """

    t: np.ndarray
    from_theta: np.ndarray
    from_chi: np.ndarray
    theta_ok: np.ndarray
    chi_ok: np.ndarray
    sup_theta: float
    inf_chi: float
    last_theta: float
    last_chi: float
    running_sup_theta: np.ndarray
    running_inf_chi: np.ndarray
    decay_time: float
    decay_time_err: float


class EmptyReportError(ValueError):
    pass


def zeta_report(theta: SeriesEstimate, chi: SeriesEstimate, sigmas: float = USABLE_SIGMAS) -> ZetaReport:
    if len(theta.value) == 0:
        raise PreconditionError("empty series")
    t = theta.t.astype(float)
    th_ok = theta.usable(sigmas) & (theta.value < 1) & (t > 0)
    ch_ok = chi.usable(sigmas) & (chi.value != 1) & (t > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zt = np.where(th_ok, -t / np.log(theta.value), np.nan)
        zc = np.where(ch_ok, -t / np.log(chi.value), np.nan)
    if not th_ok.any() and not ch_ok.any():
        raise EmptyReportError("no usable entries for the relaxation-time report")
    run_sup = np.fmax.accumulate(np.where(th_ok, zt, -np.inf))
    run_sup[np.isinf(run_sup)] = np.nan
    # the infimum form only makes sense where chi_t < 1 (positive ratio)
    zc_pos = np.where(ch_ok & (zc > 0), zc, np.inf)
    run_inf = np.fmin.accumulate(zc_pos)
    run_inf[np.isinf(run_inf)] = np.nan

    def last(a, ok):
        idx = np.flatnonzero(ok)
        return float(a[idx[-1]]) if len(idx) else float("nan")

    decay, decay_err = _decay_time(theta, th_ok)
    return ZetaReport(theta.t, zt, zc, th_ok, ch_ok,
                      float(np.nanmax(zt)) if th_ok.any() else float("nan"),
                      float(np.nanmin(np.where(zc > 0, zc, np.nan))) if (ch_ok & (zc > 0)).any() else float("nan"),
                      last(zt, th_ok), last(zc, ch_ok), run_sup, run_inf, decay, decay_err)


def _decay_time(theta: SeriesEstimate, ok: np.ndarray) -> tuple[float, float]:
    """``-1 / slope`` of ``log theta_t`` over the upper half of the usable range."""
    idx = np.flatnonzero(ok)
    if len(idx) < 4:
        return float("nan"), float("nan")
    idx = idx[idx >= idx[-1] // 2]
    if len(idx) < 4:
        return float("nan"), float("nan")
    t = idx.astype(float)
    y = np.log(theta.value[idx])
    w = (theta.value[idx] / np.maximum(theta.stderr[idx], 1e-300)) ** 2
    (slope, _), cov = _wls(t, y, w)
    if slope >= 0:
        return float("inf"), float("nan")
    return -1.0 / slope, math.sqrt(cov[0, 0]) / slope ** 2


def _wls(x, y, w):
    a = np.vstack([x, np.ones_like(x)]).T
    aw = a * w[:, None]
    cov = np.linalg.inv(a.T @ aw)
    beta = cov @ (aw.T @ y)
    return beta, cov
