import json

import numpy as np
import pytest
from conftest import gp_draws

from covx.exceptions import DataError
from covx.marginal import (
    GammaFit,
    MarginalModel,
    _GPProblem,
    fit_gamma_bin,
    fit_gp_penalized,
    gamma_cdf,
    gamma_quantile,
    gp_cdf,
    gp_pdf,
    gp_quantile,
    pick_lambda,
    pooled_event_cdf,
    return_value,
    roughness_penalty,
    t_year_max_cdf,
    threshold_from_gamma,
)


def exponential_tail_model(tau=0.8, nu=1.5, xi=0.0, B=1, rate=10.0):
    """Bins with exponential gamma part and GP tail."""
    return MarginalModel.from_params(np.ones(B), np.ones(B), np.zeros(B), tau, xi, np.full(B, nu), rate=rate)


# -- gamma ------------------------------------------------------------------


def test_gamma_recovery(rng):
    data = rng.gamma(2.0, 1.5, 10_000)
    g = fit_gamma_bin(data)
    assert 1.9 <= g.omega[0] <= 2.1
    assert 1.4 <= g.kappa[0] <= 1.6
    assert g.l[0] < data.min()


def test_gamma_location_equivariance(rng):
    data = rng.gamma(3.0, 1.0, 2000)
    a, b = fit_gamma_bin(data), fit_gamma_bin(data + 25.0)
    assert b.l[0] - a.l[0] == pytest.approx(25.0, abs=1e-9)
    assert b.omega[0] == pytest.approx(a.omega[0], abs=1e-6)
    assert b.kappa[0] == pytest.approx(a.kappa[0], abs=1e-6)


def test_sparse_bin_uses_pooled_fit(rng):
    y = np.concatenate([rng.gamma(2.0, 1.0, 500), [1.0, 2.0, 3.0]])
    bins = np.concatenate([np.zeros(500, int), np.ones(3, int)])
    m = MarginalModel(tau=0.5, roughness=1.0).fit(y, bins, 2)
    assert m.gamma_.sparse.tolist() == [False, True]
    pooled = fit_gamma_bin(y)
    assert m.gamma_.omega[1] == pytest.approx(pooled.omega[0])


def test_gamma_exponential_closed_form():
    assert gamma_cdf(2.0, 1.0, 2.0, 0.0) == pytest.approx(1 - np.exp(-1), abs=1e-12)
    assert gamma_cdf(3.0, 2.5, 1.0, 3.0) == 0.0


def test_gamma_quantile_round_trip():
    y = np.linspace(0.1, 12.0, 50)
    p = gamma_cdf(y, 2.5, 1.3, 0.0)
    assert np.allclose(gamma_quantile(p, 2.5, 1.3, 0.0), y, atol=1e-9)
    with pytest.raises(ValueError):
        gamma_quantile(1.0, 2.0, 1.0, 0.0)


def test_threshold_from_gamma():
    g = GammaFit([1.0], [1.0], [0.0])
    assert threshold_from_gamma(g, 0.0)[0] == 0.0
    assert threshold_from_gamma(g, 1 - np.exp(-1))[0] == pytest.approx(1.0, abs=1e-9)


def test_threshold_band_for_random_tau(rng):
    g = GammaFit([2.0], [1.5], [0.0])
    lo, hi = threshold_from_gamma(g, 0.7)[0], threshold_from_gamma(g, 0.9)[0]
    for tau in rng.uniform(0.7, 0.9, 20):
        assert lo <= threshold_from_gamma(g, tau)[0] <= hi


# -- generalised Pareto -------------------------------------------------------


def test_gp_cdf_values():
    assert gp_cdf(0.0, 0.2, 1.0, 0.0) == 0.0
    assert gp_cdf(2.0, -0.5, 1.0, 0.0) == 1.0
    assert gp_cdf(3.0, -0.5, 1.0, 0.0) == 1.0
    assert gp_pdf(3.0, -0.5, 1.0, 0.0) == 0.0
    assert gp_cdf(1.0, 0.2, 1.0, 0.0) == pytest.approx(1 - 1.2**-5, abs=1e-12)
    assert gp_cdf(1.0, 0.2, 1.0, 0.0) == pytest.approx(0.598122, abs=1e-6)


def test_gp_exponential_limit():
    y = np.linspace(0, 5, 11)
    assert np.allclose(gp_cdf(y, 1e-9, 2.0, 0.0), 1 - np.exp(-y / 2.0), atol=1e-12)
    assert np.allclose(gp_cdf(y, 1e-6, 2.0, 0.0), 1 - np.exp(-y / 2.0), atol=1e-5)


def test_gp_quantile_round_trip():
    q = np.linspace(0.01, 0.99, 25)
    for xi in (-0.3, 0.0, 0.25):
        assert np.allclose(gp_cdf(gp_quantile(q, xi, 1.3, 2.0), xi, 1.3, 2.0), q, atol=1e-12)


def test_gp_rejects_bad_scale():
    with pytest.raises(ValueError):
        gp_cdf(1.0, 0.1, 0.0, 0.0)


@pytest.mark.parametrize("method", ["nelder_mead", "newton_raphson"])
def test_gp_recovery_single_bin(rng, method):
    z = gp_draws(rng, 5000, -0.2, 2.0)
    fit = fit_gp_penalized(z, np.zeros(z.size, int), [0.0], 0.0, method=method)
    assert -0.25 <= fit.xi <= -0.15
    assert 1.9 <= fit.nu[0] <= 2.1
    assert np.all(z < fit.psi[0] - fit.nu[0] / fit.xi)


def test_huge_penalty_forces_constant_scale(rng):
    nu = np.array([1.0, 2.0, 3.0])
    bins = np.repeat(np.arange(3), 400)
    z = gp_draws(rng, bins.size, -0.1, nu[bins])
    for method in ("nelder_mead", "newton_raphson"):
        fit = fit_gp_penalized(z, bins, np.zeros(3), 1e8, method=method)
        assert np.ptp(fit.nu) < 1e-3 * fit.nu.mean()


def test_identical_bins_zero_penalty(rng):
    z = gp_draws(rng, 800, -0.2, 1.5)
    y = np.concatenate([z, z])
    bins = np.repeat([0, 1], z.size)
    pen = fit_gp_penalized(y, bins, np.zeros(2), 0.0, method="newton_raphson")
    single = fit_gp_penalized(z, np.zeros(z.size, int), [0.0], 0.0, method="newton_raphson")
    assert roughness_penalty(pen.nu) < 1e-10
    assert pen.xi == pytest.approx(single.xi, abs=1e-5)
    assert pen.nu[0] == pytest.approx(single.nu[0], rel=1e-5)


def test_empty_bin_tied_to_mean(rng):
    bins = np.repeat([0, 1, 2], 300)
    y = gp_draws(rng, bins.size, -0.2, 1.0) + 0.0
    psi = np.array([0.0, 0.0, 1e6])
    fit = fit_gp_penalized(y, bins, psi, 1.0, n_bins=3, method="newton_raphson")
    assert fit.empty.tolist() == [False, False, True]
    assert fit.nu[2] == pytest.approx(fit.nu[:2].mean())


def test_no_exceedances_raises():
    with pytest.raises(DataError):
        fit_gp_penalized(np.zeros(5), np.zeros(5, int), [1.0], 0.0)


def test_gp_gradient_matches_finite_differences(rng):
    bins = np.repeat([0, 1], 200)
    z = gp_draws(rng, bins.size, -0.15, np.array([1.0, 2.0])[bins])
    for log_scale in (True, False):
        prob = _GPProblem(z, bins, np.array([0, 1]), 2, 3.0, log_scale=log_scale)
        theta = prob.pack(-0.12, np.array([1.1, 1.9]))
        g = prob.gradient(theta)
        h = 1e-6
        fd = np.array([(prob.objective(theta + h * e) - prob.objective(theta - h * e)) / (2 * h)
                       for e in np.eye(theta.size)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_descent_property(rng):
    bins = np.repeat([0, 1], 300)
    z = gp_draws(rng, bins.size, -0.2, np.array([1.0, 3.0])[bins])
    prob = _GPProblem(z, bins, np.array([0, 1]), 2, 10.0)
    start = prob.objective(prob.pack(-0.1, np.array([z[:300].mean(), z[300:].mean()])))
    fit = fit_gp_penalized(z, bins, np.zeros(2), 10.0)
    assert prob.objective(prob.pack(fit.xi, fit.nu)) <= start


def test_pick_lambda_prefers_larger_on_ties():
    assert pick_lambda([0.1, 1.0, 10.0], [3.0, 2.0, 2.0]) == 10.0
    assert pick_lambda([0.1, 1.0, 10.0], [1.0, 2.0, 2.0]) == 0.1


# -- mixture and pooled distributions ---------------------------------------


def test_splice_point_and_tail():
    m = exponential_tail_model(tau=0.8)
    psi = m.psi_[0]
    assert m.cdf(psi, 0) == pytest.approx(0.8)
    assert m.cdf(1e6, 0) == 1.0
    y = psi + 1.5 * np.log(2.0)
    assert m.cdf(y, 0) == pytest.approx(0.8 + 0.2 * 0.5)


def test_mixture_continuous_and_monotone():
    m = MarginalModel.from_params([2.0, 3.0], [1.0, 0.7], [0.0, 0.5], 0.75, -0.2, [1.2, 0.8])
    for b in range(2):
        grid = np.linspace(m.gamma_.l[b], m.upper_endpoint([b])[0] + 1, 1000)
        F = m.cdf(grid, b)
        assert np.all(np.diff(F) >= 0)
        psi = m.psi_[b]
        assert m.cdf(np.nextafter(psi, -np.inf), b) == pytest.approx(m.cdf(psi, b), abs=1e-9)


def test_quantile_inverts_cdf():
    m = MarginalModel.from_params([2.0], [1.0], [0.0], 0.7, 0.1, [1.0])
    u = np.linspace(0.01, 0.99, 99)
    assert np.allclose(m.cdf(m.quantile(u, 0), 0), u, atol=1e-10)


def test_pooled_cdf():
    m = MarginalModel.from_params([2.0, 3.0], [1.0, 1.0], [0.0, 0.0], 0.8, -0.1, [1.0, 2.0], p=[0.2, 0.6])
    y = 2.5
    assert pooled_event_cdf(y, [1], m) == pytest.approx(m.cdf(y, 1))
    assert pooled_event_cdf(y, [0, 1], m) == pytest.approx(0.25 * m.cdf(y, 0) + 0.75 * m.cdf(y, 1))
    same = MarginalModel.from_params([2.0, 2.0], [1.0, 1.0], [0.0, 0.0], 0.8, -0.1, [1.0, 1.0], p=[0.9, 0.1])
    assert pooled_event_cdf(y, None, same) == pytest.approx(same.cdf(y, 0))
    with pytest.raises(ValueError):
        pooled_event_cdf(y, [], m)


def test_weighted_average_arithmetic():
    # two bins with probabilities 0.25 / 0.75 and CDFs 0.2 / 0.6 at y
    m = MarginalModel.from_params([1.0, 1.0], [1.0, 1.0], [0.0, 0.0], 0.0, 0.0, [1.0, 1.0], p=[0.25, 0.75])
    y0, y1 = -np.log(0.8), -np.log(0.4)
    m.gp_.nu = np.array([1.0, y0 / y1])
    assert m.cdf(y0, 0) == pytest.approx(0.2)
    assert m.cdf(y0, 1) == pytest.approx(0.6)
    assert m.pooled_cdf(y0) == pytest.approx(0.5)


def test_t_year_max_cdf_arithmetic():
    m = exponential_tail_model(rate=10.0)
    assert t_year_max_cdf(1e9, 5.0, 10.0, None, m) == 1.0
    # choose y with 1 - F(y) = 1/1000
    y = m.quantile(0.999, 0)
    assert t_year_max_cdf(y, 100.0, 10.0, None, m) == pytest.approx(np.exp(-1.0), abs=1e-9)
    assert m.t_year_max_cdf(y, 100.0) == pytest.approx(np.exp(-1.0), abs=1e-9)


def test_subset_rate_scales_with_probability():
    m = MarginalModel.from_params([1.0, 1.0], [1.0, 1.0], [0.0, 0.0], 0.5, 0.0, [1.0, 1.0], p=[0.3, 0.7], rate=10.0)
    assert m.subset_rate([1]) == pytest.approx(7.0)
    y = 4.0
    expected = np.exp(-100.0 * 7.0 * (1 - m.cdf(y, 1)))
    assert m.t_year_max_cdf(y, 100.0, [1]) == pytest.approx(expected)


def test_return_value_round_trip_and_closed_form():
    tau, nu, rate, T = 0.8, 1.5, 10.0, 100.0
    m = exponential_tail_model(tau, nu, rate=rate)
    p = np.exp(-1.0)
    y = return_value(T, p, None, m)
    assert m.t_year_max_cdf(y, T) == pytest.approx(p, abs=1e-8)
    closed = m.psi_[0] + nu * np.log(T * rate * (1 - tau) / (-np.log(p)))
    assert y == pytest.approx(closed, abs=1e-6)
    assert m.return_value(1000.0) > y > m.return_value(10.0)


def test_return_value_at_endpoint_warns():
    m = exponential_tail_model(xi=-0.5, nu=1.0, rate=1e6)
    with pytest.warns(RuntimeWarning):
        y = m.return_value(1e6, prob=1 - 1e-15)
    assert y == pytest.approx(m.upper_endpoint([0])[0], rel=1e-6)


def test_invalid_bin_and_period():
    m = exponential_tail_model()
    with pytest.raises(ValueError):
        m.cdf(1.0, 3)
    with pytest.raises(ValueError):
        m.t_year_max_cdf(1.0, 0.0)


# -- estimator ----------------------------------------------------------------


def test_estimator_fit_and_serialization(rng):
    bins = np.repeat([0, 1], 1500)
    y = rng.gamma(3.0, 1.0 + bins) + 0.1
    m = MarginalModel(tau=0.8, roughness=1.0).fit(y, bins, 2, rate=12.0)
    assert m.gamma_.omega.shape == (2,)
    assert m.p_.tolist() == [0.5, 0.5]
    u = m.transform(y, bins)
    assert np.all((u >= 0) & (u <= 1))
    assert np.allclose(m.inverse_transform(u, bins), y, rtol=1e-8)
    back = MarginalModel.from_dict(json.loads(json.dumps(m.to_dict())))
    grid = np.linspace(0, 20, 50)
    assert np.array_equal(back.cdf(grid, 1), m.cdf(grid, 1))
    assert back.return_value(50.0) == m.return_value(50.0)
    assert m.get_params()["tau"] == 0.8


def test_estimator_cv_records_scores(rng):
    bins = np.repeat([0, 1], 400)
    y = rng.gamma(2.0, 1.0, bins.size)
    m = MarginalModel(tau=0.7, lambda_grid=[0.1, 10.0, 1000.0], n_folds=4, method="newton_raphson").fit(y, bins)
    assert m.cv_scores_.shape == (3,)
    assert m.roughness_ in (0.1, 10.0, 1000.0)
    assert m.roughness_ == pick_lambda(m.cv_grid_, m.cv_scores_)


def test_estimator_input_validation():
    with pytest.raises(DataError):
        MarginalModel().fit([])
    with pytest.raises(DataError):
        MarginalModel().fit([1.0, np.nan])
    with pytest.raises(ValueError):
        MarginalModel(tau=1.0).fit([1.0, 2.0, 3.0])
