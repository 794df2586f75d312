import math

import numpy as np
import pytest
from sklearn.base import clone

from oriperc.analysis import (
    PREDICTED_EXPONENTS,
    Exponent,
    InsufficientPointsError,
    PowerLawRegressor,
    SweepPoint,
    critical_exponents,
    exponent_relation,
    fit_exponent,
    gamma_mu_residual,
    hyperscaling_report,
    lemma_bound_report,
    off_critical_fits,
)
from oriperc.estimators import SeriesEstimate, TwoPointProfile, theta_series
from oriperc.growth import run_ensemble
from oriperc.model import ModelParams, PreconditionError
from oriperc.oracle import exact_cluster_stats


def series(values, name="y", err=None):
    values = np.asarray(values, dtype=float)
    err = np.zeros_like(values) if err is None else np.asarray(err, dtype=float)
    return SeriesEstimate(name, values, err, np.full(len(values), 10**6))


def power(t_max, b, amp=1.0, corr=0.0):
    t = np.arange(t_max + 1, dtype=float)
    t[0] = 1.0
    return amp * t ** b * (1 + corr / t)


@pytest.mark.parametrize("method", ["global", "local"])
def test_exact_power_law(method):
    fit = fit_exponent(series(power(4096, -0.5)), (16, 4096), method)
    assert fit.exponent == pytest.approx(-0.5, abs=1e-9)
    assert fit.window == (16, 4096) and fit.method == method


def test_power_law_with_correction():
    fit = fit_exponent(series(power(4096, 0.3137, 3.0, 5.0)), (256, 4096))
    assert abs(fit.exponent - 0.3137) < 0.01


def test_local_slopes_remove_log_correction():
    t = np.arange(1 << 16, dtype=float)
    t[0] = 2.0
    y = t ** 0.3137 * np.log(t) ** 0.4
    local = fit_exponent(series(y), (256, 1 << 15), "local")
    naive = fit_exponent(series(y), (256, 1 << 15), "global")
    assert abs(local.exponent - 0.3137) < 0.005 < abs(naive.exponent - 0.3137)


def test_weighted_fit_uses_errors():
    y = power(1024, 0.7, 2.0)
    fit = fit_exponent(series(y, err=1e-3 * y), (8, 1024))
    assert fit.exponent == pytest.approx(0.7, abs=1e-9)
    assert 0 < fit.stderr < 1e-3


def test_insufficient_points_lists_usable():
    y = power(100, -0.2)
    err = np.full_like(y, 1.0)  # unit errors swamp every value
    with pytest.raises(InsufficientPointsError) as info:
        fit_exponent(series(y, err=err), (10, 100))
    assert len(info.value.usable) < 5


def test_window_validated():
    with pytest.raises(PreconditionError):
        fit_exponent(series(power(64, 1.0)), (32, 32))


def test_regressor_is_an_sklearn_estimator():
    reg = PowerLawRegressor(method="global", t_min=4, t_max=512)
    assert clone(reg).get_params() == reg.get_params()
    t = np.arange(1, 513, dtype=float)
    y = 1.5 * t ** -0.25
    reg.fit(t, y)
    assert reg.score(t[3:], y[3:]) == pytest.approx(1.0)
    assert np.allclose(reg.predict([16.0]), 1.5 * 16 ** -0.25)
    reg.set_params(method="local")
    assert reg.fit(t, y).exponent_ == pytest.approx(-0.25, abs=1e-9)


def test_regressor_rejects_unknown_method():
    t = np.arange(1, 100, dtype=float)
    with pytest.raises(ValueError):
        PowerLawRegressor(method="median").fit(t, t)


def test_table_residuals():
    e = PREDICTED_EXPONENTS
    one = exponent_relation(e[1]["rho"], e[1]["eta"], e[1]["nu"], 1)
    assert one.residual == pytest.approx(-0.000001, abs=1e-9)
    assert exponent_relation(e[4]["rho"], e[4]["eta"], e[4]["nu"], 4).residual == pytest.approx(0, abs=1e-12)
    two = exponent_relation(e[2]["rho"], e[2]["eta"], e[2]["nu"], 2)
    assert two.residual == pytest.approx(0.004, abs=1e-9)
    assert two.equality_pass is None


def test_gamma_mu_table_value():
    e = PREDICTED_EXPONENTS[1]
    res, err = gamma_mu_residual(e["nu"], e["rho"], e["mu"], e["gamma"])
    # the inputs carry six decimals, so compare at one unit of the sixth
    assert res == pytest.approx(-0.000002, abs=1e-6) and err == 0


def test_relation_error_propagation():
    rel = exponent_relation(Exponent(0.16, 0.01), Exponent(0.31, 0.02), Exponent(0.63, 0.02), 1)
    assert rel.stderr == pytest.approx(math.sqrt(0.02**2 + 0.02**2 + 0.02**2))


def test_relation_invariant_under_doubling_time():
    t_max = 8192
    th, ch, xi = power(t_max, -0.16, 0.8), power(t_max, 0.31, 1.2), power(t_max, 0.63, 0.5)
    fits = []
    for step in (1, 2):
        ss = [series(v[::step]) for v in (th, ch, xi)]
        exps = critical_exponents(*(fit_exponent(s, (64, 2048)) for s in ss))
        fits.append(exponent_relation(*exps, d=1).residual)
    assert fits[0] == pytest.approx(fits[1], abs=1e-9)


@pytest.mark.parametrize("p", [0.3, 0.6447, 0.8])
def test_report_on_exact_data_never_exceeds_one(p):
    ex = exact_cluster_stats(p, 10, prune=0)
    th, ch, xi = (series(np.asarray(v, float)) for v in (ex.theta, ex.chi, ex.xi))
    rep = hyperscaling_report(th, ch, xi, d=1)
    assert not any(rep.flagged)
    assert all(r <= 1 for r in rep.ratio)
    assert all(k > 0 for k in rep.k)


def test_report_flags_dead_times():
    agg = run_ensemble(ModelParams(1, 0.0), 4, 10, seed=0)
    from oriperc.estimators import chi_xi_series
    chi, xi = chi_xi_series(agg)
    rep = hyperscaling_report(theta_series(agg), chi, xi, d=1)
    assert rep.flagged == [True] * 4
    assert rep.ratio == [None] * 4 and rep.k == [None] * 4
    assert rep.to_dict()["ratio"] == [None] * 4


def test_report_d2_has_no_k():
    y = power(16, 0.1, 1.0)
    rep = hyperscaling_report(series(y), series(y), series(y), d=2)
    assert rep.k == [] and rep.k_spread is None
    assert len(rep.ratio) == 16


def test_report_attaches_relation():
    y = power(16, 0.1, 1.0)
    rep = hyperscaling_report(series(y), series(y), series(y), d=1, fits=(0.16, 0.31, 0.63))
    assert rep.relation.residual == pytest.approx(0.63 - 0.63)


def flat_profile(t, value=1.0):
    x = np.arange(-t, t + 1)
    tau = np.where((x + t) % 2 == 0, value, 0.0)
    return TwoPointProfile(t, x, tau, np.zeros_like(tau), 1000)


def test_lemma_full_occupation():
    rep = lemma_bound_report(flat_profile(20), 1.0, 2, 0.5)
    assert rep.inner_x == [0]
    assert rep.inner_margin == [1 - 0.5**6]
    assert rep.blocks == list(range(2, 10))
    # bound 16 * 0.5**(j-2) drops below 1 from j = 7 on
    assert [m >= 0 for m in rep.tail_margin] == [True] * 5 + [False] * 3
    assert rep.lower_ok and not rep.tail_ok


def test_lemma_blocks_follow_indexing():
    t, w = 30, 4
    rep = lemma_bound_report(flat_profile(t, 0.01), 0.5, w, 0.3)
    assert rep.blocks == [2, 3, 4, 5, 6, 7]
    assert all(j * w < t for j in rep.blocks)


def test_lemma_margins_nonincreasing_in_eps():
    rng = np.random.default_rng(0)
    prof = flat_profile(40, 1.0)
    prof.tau = prof.tau * rng.uniform(0.01, 0.2, size=len(prof.tau))
    grid = np.linspace(0.05, 0.95, 19)
    reps = [lemma_bound_report(prof, 0.3, 5, e) for e in grid]
    for a, b in zip(reps, reps[1:]):
        assert all(y <= x for x, y in zip(a.inner_margin, b.inner_margin))
        assert all(y <= x for x, y in zip(a.tail_margin, b.tail_margin))


def test_lemma_best_eps_is_largest_passing():
    prof = flat_profile(20)
    rep = lemma_bound_report(prof, 1.0, 2, 0.5, eps_grid=np.linspace(0.05, 0.95, 19))
    assert rep.best_eps is not None
    assert lemma_bound_report(prof, 1.0, 2, rep.best_eps).tail_ok
    nxt = rep.best_eps + 0.05
    assert not lemma_bound_report(prof, 1.0, 2, nxt).tail_ok


@pytest.mark.parametrize("eps,w", [(0.0, 2), (1.0, 2), (0.5, 0)])
def test_lemma_preconditions(eps, w):
    with pytest.raises(PreconditionError):
        lemma_bound_report(flat_profile(10), 1.0, w, eps)


def synthetic_sweep(p_c=0.6447, gamma=2.2777, mu=1.733847):
    ps = [0.58, 0.59, 0.60, 0.61, 0.62, 0.63]
    return [SweepPoint(p, (p_c - p) ** -gamma, 0.0, (p_c - p) ** -mu, 0.0) for p in ps]


def test_off_critical_exact_power_laws():
    e = PREDICTED_EXPONENTS[1]
    res = off_critical_fits(synthetic_sweep(), 0.6447, e["nu"], e["rho"])
    assert res.gamma.value == pytest.approx(2.2777, abs=1e-6)
    assert res.mu.value == pytest.approx(1.733847, abs=1e-6)
    assert res.gamma_mu_residual == pytest.approx((e["nu"] - 2 * e["rho"] + 1) * 1.733847 - 2.2777, abs=1e-6)


def test_off_critical_needs_points():
    with pytest.raises(InsufficientPointsError):
        off_critical_fits(synthetic_sweep()[:4], 0.6447)


def test_off_critical_ignores_supercritical_points():
    sweep = synthetic_sweep() + [SweepPoint(0.65, 1e9, 1.0, 1e4, 1.0)]
    assert off_critical_fits(sweep, 0.6447).n_gamma == 6
