import math

import numpy as np
import pytest

from oriperc.estimators import (
    EmptyReportError,
    SeriesEstimate,
    TwoPointProfile,
    chi_xi_series,
    profile_from_hits,
    susceptibility,
    theta_series,
    two_point_profile,
    two_point_profiles,
    zeta_report,
)
from oriperc.growth import run_ensemble
from oriperc.model import ModelParams, PreconditionError
from oriperc.oracle import exact_cluster_stats, exact_susceptibility


def test_full_occupation_closed_forms():
    agg = run_ensemble(ModelParams(1, 1.0), 30, 50, seed=0)
    th = theta_series(agg)
    chi, xi = chi_xi_series(agg)
    t = np.arange(31)
    assert np.all(th.value == 1) and np.all(th.stderr == 0)
    assert np.array_equal(chi.value, t + 1.0)
    assert np.allclose(xi.value, np.sqrt(t * (t + 2) / 3.0), rtol=0, atol=1e-12)
    assert np.all(chi.stderr == 0)


def test_empty_occupation_closed_forms():
    agg = run_ensemble(ModelParams(1, 0.0), 5, 50, seed=0)
    th = theta_series(agg)
    chi, xi = chi_xi_series(agg)
    assert list(th.value) == [1, 0, 0, 0, 0, 0]
    assert list(chi.value) == [1, 0, 0, 0, 0, 0]
    assert xi.value[0] == 0 and np.all(np.isnan(xi.value[1:]))
    assert list(xi.n_eff) == [50, 0, 0, 0, 0, 0]


@pytest.mark.parametrize("p", [0.3, 0.6447, 0.8])
def test_series_match_oracle(p):
    n, t_max = 100_000, 8
    agg = run_ensemble(ModelParams(1, p), t_max, n, seed=31)
    ex = exact_cluster_stats(p, t_max)
    th = theta_series(agg)
    chi, xi = chi_xi_series(agg)
    for est, exact in ((th, ex.theta), (chi, ex.chi), (xi, ex.xi)):
        exact = np.asarray(exact, dtype=float)
        ok = np.isfinite(exact) & (est.stderr > 0)
        assert np.all(np.abs(est.value[ok] - exact[ok]) <= 4 * est.stderr[ok])


def test_xi_error_tracks_batch_spread():
    # the delta-method error should describe the scatter of independent batches
    params = ModelParams(1, 0.6447)
    batches = [chi_xi_series(run_ensemble(params, 40, 4000, seed=500 + b))[1] for b in range(24)]
    vals = np.array([b.value[40] for b in batches])
    mean_se = np.mean([b.stderr[40] for b in batches])
    assert 0.6 < vals.std(ddof=1) / mean_se < 1.6


def test_susceptibility_matches_oracle():
    n, t_cut = 100_000, 8
    agg = run_ensemble(ModelParams(1, 0.6), t_cut, n, seed=8)
    mean, err = susceptibility(agg, t_cut)
    assert abs(mean - exact_susceptibility(0.6, t_cut)) < 4 * err


def test_susceptibility_full_occupation():
    agg = run_ensemble(ModelParams(1, 1.0), 10, 10, seed=0)
    mean, err = susceptibility(agg, 10)
    assert mean == sum(range(1, 12)) and err == 0


def test_susceptibility_range_checked():
    agg = run_ensemble(ModelParams(1, 0.5), 5, 10, seed=0)
    with pytest.raises(PreconditionError):
        susceptibility(agg, 6)


def test_profile_full_occupation():
    prof = two_point_profile(ModelParams(1, 1.0), 5, 20, seed=1)
    assert list(prof.x) == list(range(-5, 6))
    assert list(prof.tau) == [1, 0] * 5 + [1]
    assert prof.at(7) == 0.0 and prof.chi == 6


def test_profile_from_hits_parity_layout():
    prof = profile_from_hits(2, np.array([1, 2, 3]), 4)
    assert list(prof.tau) == [0.25, 0, 0.5, 0, 0.75]


def test_profiles_match_oracle():
    n, t_max, p = 100_000, 7, 0.6447
    _, profs = two_point_profiles(ModelParams(1, p), t_max, n, seed=77)
    ex = exact_cluster_stats(p, t_max)
    for prof in profs:
        exact = np.array([float(ex.tau_at(int(x), prof.t)) for x in prof.x])
        sigma = np.sqrt(exact * (1 - exact) / n)
        assert np.all(np.abs(prof.tau - exact) <= 4 * sigma + 1e-12)


def test_roundtrips_keep_nan():
    agg = run_ensemble(ModelParams(1, 0.2), 6, 30, seed=3)
    _, xi = chi_xi_series(agg)
    back = SeriesEstimate.from_dict(xi.to_dict())
    assert np.array_equal(np.isnan(back.value), np.isnan(xi.value))
    prof = two_point_profile(ModelParams(1, 0.6), 4, 100, seed=2)
    again = TwoPointProfile.from_dict(prof.to_dict())
    assert np.array_equal(again.tau, prof.tau)


def _synthetic(values, rel=1e-6):
    values = np.asarray(values, dtype=float)
    return SeriesEstimate("theta", values, rel * values, np.full(len(values), 10**9))


def test_zeta_on_exponential_decay():
    t = np.arange(200)
    th = _synthetic(np.exp(-t / 25.0) * 0.9 ** (t > 0))
    ch = _synthetic(np.exp(-t / 30.0))
    rep = zeta_report(th, ch)
    assert rep.decay_time == pytest.approx(25.0, rel=1e-6)
    assert rep.sup_theta >= rep.last_theta
    assert rep.inf_chi <= rep.last_chi
    assert np.all(np.diff(rep.running_sup_theta[2:]) >= 0)


def test_zeta_report_subcritical_run():
    agg = run_ensemble(ModelParams(1, 0.55), 400, 50_000, seed=5)
    th = theta_series(agg)
    chi, _ = chi_xi_series(agg)
    rep = zeta_report(th, chi)
    assert math.isfinite(rep.decay_time) and rep.decay_time > 0
    assert rep.sup_theta > 0


def test_zeta_needs_usable_entries():
    z = SeriesEstimate("theta", np.zeros(5), np.zeros(5), np.zeros(5, dtype=np.int64))
    with pytest.raises(EmptyReportError):
        zeta_report(z, z)
