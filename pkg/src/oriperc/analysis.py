"""Exponent fits and checks of the hyperscaling relations.

Conventions: the fitted ``exponent`` of a series is the slope of
``log y`` against ``log t``; ``rho`` is minus the survival slope, ``eta``
the size slope and ``nu`` the gyration-radius slope.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .estimators import SeriesEstimate, TwoPointProfile, USABLE_SIGMAS, susceptibility, theta_series, zeta_report
from .growth import run_ensemble
from .model import ModelParams, PreconditionError

# Predicted exponents (d = 1, 2, 3 and mean field).  gamma and mu are the
# off-critical exponents of the susceptibility and the relaxation time.
PREDICTED_EXPONENTS = {
    1: {"rho": 0.159464, "eta": 0.313686, "nu": 0.632613, "gamma": 2.277730, "mu": 1.733847},
    2: {"rho": 0.451, "eta": 0.230, "nu": 0.568, "gamma": 1.60, "mu": 1.295},
    3: {"rho": 0.73, "eta": 0.12, "nu": 0.526, "gamma": 1.25, "mu": 1.105},
    4: {"rho": 1.0, "eta": 0.0, "nu": 0.5, "gamma": 1.0, "mu": 1.0},
}
P_C_ESTIMATE = 0.6447   # own estimate for the d=1 bond model, not a reference value


class InsufficientPointsError(ValueError):
    def __init__(self, msg, usable):
        super().__init__(msg)
        self.usable = list(usable)


class Exponent(NamedTuple):
    value: float
    stderr: float = 0.0


@dataclass
class FitResult:
    exponent: float
    stderr: float
    window: tuple
    method: str
    goodness: float
    n_points: int
    amplitude: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Fit ``y = A t**b`` on a time window.

    ``method="global"`` is weighted least squares of ``log y`` on ``log t``
    over log-spaced grid points (``points_per_octave`` per factor 2) in the
    window.  ``method="local"`` takes slopes between successive dyadic times
    ``t_min * 2**k`` and extrapolates them linearly in ``1 / log t``.

    Attributes after ``fit``: ``exponent_``, ``exponent_err_``, ``amplitude_``,
    ``rms_``, ``n_points_``.
    """

    def __init__(self, method="global", t_min=None, t_max=None, points_per_octave=8):
        self.method = method
        self.t_min = t_min
        self.t_max = t_max
        self.points_per_octave = points_per_octave

    def fit(self, X, y, y_err=None):
        X, y = check_X_y(X, y, ensure_2d=False, dtype=float)
        t = np.ravel(X)
        err = np.zeros_like(y) if y_err is None else np.asarray(y_err, dtype=float)
        ok = (t > 0) & (y > 0) & np.isfinite(y) & (y > USABLE_SIGMAS * err)
        lo = self.t_min if self.t_min is not None else t.min()
        hi = self.t_max if self.t_max is not None else t.max()
        ok &= (t >= lo) & (t <= hi)
        if ok.sum() < 5:
            raise InsufficientPointsError(
                f"need >= 5 usable points in [{lo}, {hi}], have {int(ok.sum())}", t[ok])
        t, y, err = t[ok], y[ok], err[ok]
        if self.method == "global":
            self._fit_global(t, y, err)
        elif self.method == "local":
            self._fit_local(t, y, err)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.window_ = (float(lo), float(hi))
        return self

    def _fit_global(self, t, y, err):
        idx = _log_grid(t, self.points_per_octave)
        lt, ly = np.log(t[idx]), np.log(y[idx])
        rel = err[idx] / y[idx]
        (b, a), cov, rms = _linfit(lt, ly, rel)
        self.exponent_, self.exponent_err_ = float(b), float(math.sqrt(cov[0, 0]))
        self.amplitude_ = float(math.exp(a))
        self.rms_, self.n_points_ = rms, len(idx)

    def _fit_local(self, t, y, err):
        lookup = {float(tt): i for i, tt in enumerate(t)}
        start = t.min()
        dyadic = []
        tk = start
        while tk <= t.max():
            if float(tk) in lookup:
                dyadic.append(lookup[float(tk)])
            tk *= 2
        if len(dyadic) < 3:
            raise InsufficientPointsError("local slopes need >= 3 dyadic times in the window", t[dyadic])
        i0, i1 = np.array(dyadic[:-1]), np.array(dyadic[1:])
        slope = np.log(y[i1] / y[i0]) / np.log(t[i1] / t[i0])
        slope_err = np.hypot(err[i0] / y[i0], err[i1] / y[i1]) / np.log(t[i1] / t[i0])
        x = 1.0 / np.log(np.sqrt(t[i0] * t[i1]))
        if len(slope) == 2:
            b = slope[1] + (slope[1] - slope[0]) * (0 - x[1]) / (x[1] - x[0])
            var = (slope_err[1] ** 2 * (x[0] / (x[0] - x[1])) ** 2
                   + slope_err[0] ** 2 * (x[1] / (x[0] - x[1])) ** 2)
            rms = 0.0
        else:
            (_, b), cov, rms = _linfit(x, slope, slope_err)
            var = cov[1, 1]
        self.exponent_, self.exponent_err_ = float(b), float(math.sqrt(var))
        self.amplitude_ = float(y[dyadic[-1]] / t[dyadic[-1]] ** b)
        self.rms_, self.n_points_ = rms, len(dyadic)

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        t = np.ravel(check_array(X, ensure_2d=False, dtype=float))
        return self.amplitude_ * t ** self.exponent_


def _log_grid(t: np.ndarray, per_octave: int) -> np.ndarray:
    """Indices of ``t`` closest to a log-spaced grid (all points if the grid is denser)."""
    if per_octave is None or len(t) <= 2:
        return np.arange(len(t))
    lt = np.log2(t)
    grid = np.arange(lt.min(), lt.max() + 1e-12, 1.0 / per_octave)
    idx = np.unique(np.searchsorted(lt, grid).clip(0, len(t) - 1))
    if idx[-1] != len(t) - 1:
        idx = np.append(idx, len(t) - 1)
    return idx


def _linfit(x, y, sigma):
    """Weighted straight line; returns ((slope, intercept), covariance, rms residual)."""
    a = np.vstack([x, np.ones_like(x)]).T
    weighted = np.all(sigma > 0)
    w = 1.0 / sigma ** 2 if weighted else np.ones_like(x)
    aw = a * w[:, None]
    cov = np.linalg.inv(a.T @ aw)
    beta = cov @ (aw.T @ y)
    resid = y - a @ beta
    rms = float(math.sqrt(np.mean(resid ** 2)))
    if not weighted:
        dof = max(len(x) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    return beta, cov, rms


def fit_exponent(series: SeriesEstimate, window, method: str = "global",
                 points_per_octave: int = 8) -> FitResult:
    """Power-law exponent of ``series`` on ``window = (t_min, t_max)``."""
    t_min, t_max = window
    if not t_min < t_max:
        raise PreconditionError("window needs t_min < t_max")
    reg = PowerLawRegressor(method, t_min, t_max, points_per_octave)
    t = series.t.astype(float)
    keep = np.isfinite(series.value)
    reg.fit(t[keep], series.value[keep], np.nan_to_num(series.stderr[keep]))
    return FitResult(reg.exponent_, reg.exponent_err_, (t_min, t_max), method, reg.rms_,
                     reg.n_points_, reg.amplitude_)


def critical_exponents(theta_fit: FitResult, chi_fit: FitResult, xi_fit: FitResult):
    """``(rho, eta, nu)`` from the three slope fits."""
    return (Exponent(-theta_fit.exponent, theta_fit.stderr),
            Exponent(chi_fit.exponent, chi_fit.stderr),
            Exponent(xi_fit.exponent, xi_fit.stderr))


def _exp(v) -> Exponent:
    if isinstance(v, Exponent):
        return v
    if isinstance(v, FitResult):
        return Exponent(v.exponent, v.stderr)
    if isinstance(v, tuple):
        return Exponent(*v)
    return Exponent(float(v), 0.0)


@dataclass
class RelationResult:
    d: int
    residual: float
    stderr: float
    equality_residual: float | None
    equality_stderr: float | None
    equality_pass: bool | None

    def to_dict(self):
        return asdict(self)


def exponent_relation(rho, eta, nu, d: int) -> RelationResult:
    """``d nu - (eta + 2 rho)`` with its error; for ``d = 1`` also the equality test.

    Inputs are :class:`Exponent`, ``(value, stderr)`` tuples or plain numbers.
    """
    rho, eta, nu = _exp(rho), _exp(eta), _exp(nu)
    res = d * nu.value - (eta.value + 2 * rho.value)
    err = math.sqrt((d * nu.stderr) ** 2 + eta.stderr ** 2 + (2 * rho.stderr) ** 2)
    if d == 1:
        return RelationResult(d, res, err, res, err, abs(res) <= 2 * err)
    eq = nu.value - (eta.value + 2 * rho.value)
    eq_err = math.sqrt(nu.stderr ** 2 + eta.stderr ** 2 + (2 * rho.stderr) ** 2)
    return RelationResult(d, res, err, eq, eq_err, None)


@dataclass
class HyperscalingReport:
    d: int
    t: list
    upper_lhs: list
    upper_rhs: list
    ratio: list
    ratio_err: list
    upper_ok: list
    flagged: list
    k: list = field(default_factory=list)
    k_err: list = field(default_factory=list)
    k_min: float | None = None
    k_max: float | None = None
    k_spread: float | None = None
    k_window: tuple | None = None
    relation: RelationResult | None = None

    def to_dict(self) -> dict:
        out = {}
        for key, v in asdict(self).items():
            out[key] = _clean(v)
        return out


def _clean(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def hyperscaling_report(theta: SeriesEstimate, chi: SeriesEstimate, xi: SeriesEstimate, d: int,
                        times: Sequence[int] | None = None, k_window=None, fits=None,
                        sigmas: float = 2.0) -> HyperscalingReport:
    """Upper bound ``chi_t <= (4/3)(4 xi_t + 1)**d theta_{t//2}**2`` and, for ``d = 1``,
    the ratio ``K_t = chi_t / (xi_t theta_t**2)``.

    ``upper_ok[i]`` is ``ratio <= 1 + sigmas * err``.  Times where
    ``theta_{t//2} = 0`` or ``xi_t`` is undefined are flagged and get ``None``.
    ``fits`` may be ``(rho, eta, nu)`` to attach the exponent relation.
    """
    n = min(len(theta.value), len(chi.value), len(xi.value))
    times = list(range(1, n)) if times is None else [int(t) for t in times]
    rep = HyperscalingReport(d, times, [], [], [], [], [], [])
    for t in times:
        th_h, th_h_e = float(theta.value[t // 2]), float(theta.stderr[t // 2])
        c, c_e = float(chi.value[t]), float(chi.stderr[t])
        x, x_e = float(xi.value[t]), float(xi.stderr[t])
        th, th_e = float(theta.value[t]), float(theta.stderr[t])
        bad = not (th_h > 0 and math.isfinite(x))
        rep.flagged.append(bad)
        if bad:
            for lst in (rep.upper_lhs, rep.upper_rhs, rep.ratio, rep.ratio_err, rep.upper_ok):
                lst.append(None)
        else:
            rhs = (4.0 / 3.0) * (4 * x + 1) ** d * th_h ** 2
            r = c / rhs
            rel = math.sqrt(_rel(c_e, c) ** 2 + (d * 4 * x_e / (4 * x + 1)) ** 2 + (2 * th_h_e / th_h) ** 2)
            rep.upper_lhs.append(c)
            rep.upper_rhs.append(rhs)
            rep.ratio.append(r)
            rep.ratio_err.append(r * rel)
            rep.upper_ok.append(r <= 1 + sigmas * r * rel)
        if d == 1:
            if th > 0 and math.isfinite(x) and x > 0:
                kt = c / (x * th ** 2)
                rel = math.sqrt(_rel(c_e, c) ** 2 + _rel(x_e, x) ** 2 + (2 * th_e / th) ** 2)
                rep.k.append(kt)
                rep.k_err.append(kt * rel)
            else:
                rep.k.append(None)
                rep.k_err.append(None)
    if d == 1:
        lo, hi = k_window if k_window is not None else (min(times), max(times))
        ks = [k for t, k in zip(times, rep.k) if k is not None and lo <= t <= hi]
        if ks:
            rep.k_min, rep.k_max = min(ks), max(ks)
            rep.k_spread = rep.k_max / rep.k_min if rep.k_min > 0 else float("inf")
            rep.k_window = (lo, hi)
    if fits is not None:
        rep.relation = exponent_relation(*fits, d=d)
    return rep


def _rel(e, v):
    return e / v if v else 0.0


@dataclass
class LemmaBoundReport:
    t: int
    eps: float
    w_t: int
    theta_t: float
    inner_x: list
    inner_margin: list
    blocks: list
    block_max_tau: list
    block_bound: list
    tail_margin: list
    lower_ok: bool
    tail_ok: bool
    best_eps: float | None

    def to_dict(self):
        return _clean(asdict(self))


def _lemma_margins(profile: TwoPointProfile, theta_t: float, w_t: int, eps: float):
    t = profile.t
    lower = eps ** 6 * theta_t ** 2
    half = w_t / 2.0
    inner_x = [x for x in range(-t, t + 1) if abs(x) <= half and (x + t) % 2 == 0]
    inner = [profile.at(x) - lower for x in inner_x]
    blocks, maxes, bounds, tails = [], [], [], []
    j = 2
    while j * w_t < t:
        xs = range(j * w_t + 1, min((j + 1) * w_t, t) + 1)
        mx = max(profile.at(x) for x in xs)
        bound = eps ** -4 * theta_t ** 2 * (1 - eps) ** (j - 2)
        blocks.append(j)
        maxes.append(mx)
        bounds.append(bound)
        tails.append(bound - mx)
        j += 1
    return inner_x, inner, blocks, maxes, bounds, tails


def lemma_bound_report(profile: TwoPointProfile, theta_t: float, w_t: int, eps: float,
                       eps_grid=None) -> LemmaBoundReport:
    """Margins of ``tau >= eps**6 theta_t**2`` on ``|x| <= w_t / 2`` and of the block tail
    ``max_{j w_t < x <= (j+1) w_t} tau <= eps**-4 theta_t**2 (1 - eps)**(j - 2)``, ``j >= 2``.

    Only lattice sites (``x + t`` even) enter the inner bound.  ``best_eps`` is
    the largest value of ``eps_grid`` for which every margin is nonnegative.
    """
    if not 0 < eps < 1:
        raise PreconditionError("eps must lie in (0, 1)")
    if w_t < 1:
        raise PreconditionError("w_t must be >= 1")
    inner_x, inner, blocks, maxes, bounds, tails = _lemma_margins(profile, theta_t, w_t, eps)
    grid = np.linspace(0.01, 0.99, 99) if eps_grid is None else np.asarray(eps_grid, dtype=float)
    best = None
    for e in sorted(grid):
        if not 0 < e < 1:
            continue
        _, ii, _, _, _, tt = _lemma_margins(profile, theta_t, w_t, e)
        if all(m >= 0 for m in ii) and all(m >= 0 for m in tt):
            best = float(e)
    return LemmaBoundReport(profile.t, eps, w_t, theta_t, inner_x, inner, blocks, maxes, bounds, tails,
                            all(m >= 0 for m in inner), all(m >= 0 for m in tails), best)


@dataclass
class SweepPoint:
    p: float
    chi_sum: float
    chi_sum_err: float
    zeta: float
    zeta_err: float

    def to_dict(self):
        return _clean(asdict(self))


@dataclass
class OffCriticalResult:
    p_c: float
    gamma: Exponent
    mu: Exponent | None
    gamma_mu_residual: float | None
    gamma_mu_err: float | None
    n_gamma: int
    n_mu: int

    def to_dict(self):
        out = {"p_c": self.p_c, "gamma": list(self.gamma),
               "mu": list(self.mu) if self.mu else None,
               "gamma_mu_residual": self.gamma_mu_residual, "gamma_mu_err": self.gamma_mu_err,
               "n_gamma": self.n_gamma, "n_mu": self.n_mu}
        return _clean(out)


def gamma_mu_residual(nu, rho, mu, gamma) -> tuple[float, float]:
    """``(nu - 2 rho + 1) mu - gamma`` with first-order error."""
    nu, rho, mu, gamma = _exp(nu), _exp(rho), _exp(mu), _exp(gamma)
    a = nu.value - 2 * rho.value + 1
    res = a * mu.value - gamma.value
    err = math.sqrt((mu.value * nu.stderr) ** 2 + (2 * mu.value * rho.stderr) ** 2
                    + (a * mu.stderr) ** 2 + gamma.stderr ** 2)
    return res, err


def _divergence_fit(p_c, ps, vals, errs):
    x = -np.log(p_c - np.asarray(ps))
    y = np.log(np.asarray(vals))
    rel = np.asarray(errs) / np.asarray(vals)
    (b, _), cov, _ = _linfit(x, y, rel)
    return Exponent(float(b), float(math.sqrt(cov[0, 0])))


def off_critical_fits(sweep: Sequence[SweepPoint], p_c: float, nu=None, rho=None,
                      min_points: int = 5) -> OffCriticalResult:
    """``gamma`` and ``mu`` from divergences ``(p_c - p)**-gamma`` and ``(p_c - p)**-mu``."""
    pts = [s for s in sweep if s.p < p_c]
    g_pts = [s for s in pts if s.chi_sum > 0 and math.isfinite(s.chi_sum)]
    if len(g_pts) < min_points:
        raise InsufficientPointsError(f"need >= {min_points} subcritical sweep points, have {len(g_pts)}",
                                      [s.p for s in g_pts])
    gamma = _divergence_fit(p_c, [s.p for s in g_pts], [s.chi_sum for s in g_pts],
                            [s.chi_sum_err for s in g_pts])
    z_pts = [s for s in pts if math.isfinite(s.zeta) and s.zeta > 0 and math.isfinite(s.zeta_err)]
    mu = None
    if len(z_pts) >= min_points:
        mu = _divergence_fit(p_c, [s.p for s in z_pts], [s.zeta for s in z_pts],
                             [s.zeta_err for s in z_pts])
    res = err = None
    if mu is not None and nu is not None and rho is not None:
        res, err = gamma_mu_residual(nu, rho, mu, gamma)
    return OffCriticalResult(p_c, gamma, mu, res, err, len(g_pts), len(z_pts))


def run_sweep(ps: Sequence[float], t_cut: int, n: int, seed: int, threads=None) -> list[SweepPoint]:
    """Truncated susceptibility and relaxation-time estimate at each ``p``."""
    from .estimators import chi_xi_series

    out = []
    for i, p in enumerate(ps):
        agg = run_ensemble(ModelParams(1, p), t_cut, n, seed + i, threads=threads)
        chi_sum, chi_err = susceptibility(agg, t_cut)
        th = theta_series(agg)
        chi, _ = chi_xi_series(agg)
        try:
            z = zeta_report(th, chi)
            zeta, zeta_err = z.decay_time, z.decay_time_err
        except ValueError:
            zeta, zeta_err = float("nan"), float("nan")
        out.append(SweepPoint(float(p), chi_sum, chi_err, zeta, zeta_err))
    return out
