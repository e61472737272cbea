import numpy as np
import pytest
from scipy import integrate, stats

from covx.dependence import (
    HeffernanTawn,
    _HTProblem,
    conditional_return_distribution,
    fit_ht_variate,
    from_laplace,
    gg_logpdf,
    gg_sample,
    gumbel_cdf,
    gumbel_quantile,
    laplace_cdf,
    laplace_quantile,
    simulate_joint,
    to_laplace,
)
from covx.exceptions import DataError
from covx.marginal import MarginalModel


def ht_sample(rng, n, alpha, beta=0.3, mu=0.1, sigma=0.8, bins=None):
    """Conditioning exceedances above 1 with HT associated values."""
    alpha = np.atleast_1d(alpha)
    bins = np.zeros(n, int) if bins is None else bins
    x = 1.0 + rng.exponential(1.0, n)
    v = alpha[bins] * x + x**beta * (mu + sigma * rng.standard_normal(n))
    return x, v, bins


def margin_models(B=1, rate=5.0, p=None):
    return [
        MarginalModel.from_params(np.full(B, 2.0), np.full(B, 1.0), np.zeros(B), 0.7, -0.1, np.full(B, 1.2),
                                  p=p, rate=rate, name="A"),
        MarginalModel.from_params(np.full(B, 3.0), np.full(B, 0.5), np.zeros(B), 0.7, 0.05, np.full(B, 0.6),
                                  p=p, rate=rate, name="B"),
    ]


# -- margins ----------------------------------------------------------------


def test_laplace_values():
    assert laplace_cdf(0.0) == 0.5
    assert laplace_cdf(np.log(2.0)) == pytest.approx(0.75)
    assert laplace_cdf(-np.log(2.0)) == pytest.approx(0.25)
    p = np.linspace(1e-6, 1 - 1e-6, 101)
    assert np.allclose(laplace_cdf(laplace_quantile(p)), p, atol=1e-12)
    assert np.allclose(gumbel_cdf(gumbel_quantile(p)), p, atol=1e-12)
    assert np.allclose(laplace_cdf(p), stats.laplace.cdf(p))


def test_transform_round_trip(rng):
    ms = margin_models()
    bins = np.zeros(500, int)
    X = np.column_stack([ms[0].sample(500, rng, bins)[0], ms[1].sample(500, rng, bins)[0]])
    ls = to_laplace(X, bins, ms)
    assert ls.y.shape == (500, 2)
    for d in range(2):
        assert np.allclose(from_laplace(ls.y[:, d], bins, ms[d]), X[:, d], rtol=1e-9)


def test_transform_clamps_with_warning():
    ms = margin_models()
    X = np.array([[1e9, 1.0], [1.0, 1.0]])
    with pytest.warns(RuntimeWarning):
        ls = to_laplace(X, np.zeros(2, int), ms)
    assert ls.clamped[0, 0]
    assert np.isfinite(ls.y).all()


# -- generalised Gaussian -----------------------------------------------------


def test_gg_special_cases():
    w = np.linspace(-3, 3, 13)
    assert np.allclose(gg_logpdf(w, 0.5, 2.0, 2), stats.norm.logpdf(w, 0.5, np.sqrt(2.0)))
    b = np.sqrt(2.0) / np.sqrt(2.0)
    assert np.allclose(gg_logpdf(w, 0.0, 2.0, 1), stats.laplace.logpdf(w, 0.0, b))


@pytest.mark.parametrize("delta", [1, 2])
def test_gg_moments_by_quadrature(delta):
    f = lambda w: np.exp(gg_logpdf(w, 1.0, 3.0, delta))
    assert integrate.quad(f, -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-8)
    assert integrate.quad(lambda w: w * f(w), -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-7)
    assert integrate.quad(lambda w: (w - 1) ** 2 * f(w), -np.inf, np.inf)[0] == pytest.approx(3.0, abs=1e-6)


@pytest.mark.parametrize("delta", [1, 2])
def test_gg_sample_unit_variance(rng, delta):
    z = gg_sample(rng, 200_000, delta)
    assert abs(z.mean()) < 0.01
    assert z.var() == pytest.approx(1.0, abs=0.02)


def test_gg_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gg_logpdf(0.0, 0.0, 1.0, 3)
    with pytest.raises(ValueError):
        gg_logpdf(0.0, 0.0, 0.0, 2)


# -- fitting ----------------------------------------------------------------


def test_ht_gradient_matches_finite_differences(rng):
    bins = np.repeat([0, 1], 150)
    x, v, _ = ht_sample(rng, 300, [0.3, 0.6], bins=bins)
    for tanh_alpha in (True, False):
        for delta in (1, 2):
            prob = _HTProblem(x, v, bins, np.array([0, 1]), 2, 2.0, delta, tanh_alpha=tanh_alpha)
            theta = prob.pack(np.array([0.35, 0.55]), 0.25, 0.05, 0.9)
            g = prob.gradient(theta)
            h = 1e-6
            fd = np.array([(prob.objective(theta + h * e) - prob.objective(theta - h * e)) / (2 * h)
                           for e in np.eye(theta.size)])
            assert np.allclose(g, fd, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("method", ["newton_raphson", "nelder_mead"])
def test_ht_recovery(rng, method):
    bins = np.repeat([0, 1, 2], 2000)
    alpha = np.array([0.2, 0.5, 0.8])
    x, v, _ = ht_sample(rng, bins.size, alpha, beta=0.3, mu=0.0, sigma=0.7, bins=bins)
    fit = fit_ht_variate(x, v, bins, 3, 0.0, 2, method)
    assert np.allclose(fit.alpha, alpha, atol=0.06)
    assert -1 < fit.alpha.min() and fit.alpha.max() <= 1
    assert fit.beta < 1
    assert fit.sigma > 0


def test_methods_agree(rng):
    bins = np.repeat([0, 1], 800)
    x, v, _ = ht_sample(rng, bins.size, [0.3, 0.6], bins=bins)
    a = fit_ht_variate(x, v, bins, 2, 1.0, 2, "newton_raphson")
    b = fit_ht_variate(x, v, bins, 2, 1.0, 2, "nelder_mead")
    assert np.allclose(a.alpha, b.alpha, atol=1e-4)
    assert a.beta == pytest.approx(b.beta, abs=1e-3)


def test_huge_penalty_constant_slope(rng):
    bins = np.repeat([0, 1, 2], 500)
    x, v, _ = ht_sample(rng, bins.size, [0.2, 0.5, 0.8], bins=bins)
    fit = fit_ht_variate(x, v, bins, 3, 1e8, 2)
    assert np.ptp(fit.alpha) < 1e-3


def test_exact_dependence_limit(rng):
    x = 1.0 + rng.exponential(1.0, 500)
    fit = fit_ht_variate(x, x.copy(), np.zeros(500, int), 1, 0.0, 2)
    assert fit.alpha[0] == pytest.approx(1.0, abs=0.02)
    assert fit.sigma < 0.05


def test_empty_bin_gets_mean_slope(rng):
    bins = np.repeat([0, 2], 400)
    x, v, _ = ht_sample(rng, bins.size, np.array([0.3, 0.0, 0.7]), bins=bins)
    fit = fit_ht_variate(x, v, bins, 3, 0.0, 2)
    assert fit.empty.tolist() == [False, True, False]
    assert fit.alpha[1] == pytest.approx(0.5 * (fit.alpha[0] + fit.alpha[2]))


def test_rejects_nonpositive_conditioning():
    with pytest.raises(DataError):
        fit_ht_variate([-1.0, 2.0], [0.0, 1.0], [0, 0], 1, 0.0)


# -- estimator ----------------------------------------------------------------


def laplace_joint(rng, n, alpha, bins):
    """Standard Laplace conditioning with HT-style associates everywhere."""
    y = rng.laplace(size=n)
    z = rng.laplace(size=n)
    a = np.asarray(alpha)[bins]
    v = np.where(y > 0, a * y + np.abs(y) ** 0.2 * 0.6 * rng.standard_normal(n), a * y + np.sqrt(1 - a**2) * z)
    return np.column_stack([y, v])


def test_estimator_residual_reconstruction(rng):
    bins = np.repeat([0, 1], 2000)
    Y = laplace_joint(rng, bins.size, [0.4, 0.7], bins)
    ht = HeffernanTawn(tau_dep=0.7, roughness=1.0).fit(Y, bins, 2)
    for b in range(2):
        src = ht.residual_source_[b]
        x, V = Y[src, 0], Y[src, 1:]
        mean, scale = ht.location_scale(x, np.full(src.size, b))
        assert np.allclose(mean + scale * ht.residuals_[b], V, atol=1e-10)
    assert ht.below_.shape[0] + sum(r.shape[0] for r in ht.residuals_) == Y.shape[0]
    assert np.all(ht.below_[:, 0] <= ht.phi_)


def test_estimator_cv_and_serialisation(rng):
    bins = np.repeat([0, 1], 600)
    Y = laplace_joint(rng, bins.size, [0.4, 0.7], bins)
    ht = HeffernanTawn(tau_dep=0.7, lambda_grid=[0.1, 10.0, 1e3], n_folds=4).fit(Y, bins, 2)
    assert ht.cv_scores_.shape == (3, 1)
    d = ht.to_dict()
    back = HeffernanTawn.from_dict(d, ht.residuals_, ht.below_, ht.below_bins_)
    assert np.array_equal(back.alpha_, ht.alpha_)
    r1 = back.simulate(200, np.random.default_rng(3), [0.5, 0.5])[0]
    r2 = ht.simulate(200, np.random.default_rng(3), [0.5, 0.5])[0]
    assert np.array_equal(r1, r2)


def test_too_few_exceedances(rng):
    Y = rng.laplace(size=(30, 2))
    with pytest.raises(DataError):
        HeffernanTawn(tau_dep=0.95, roughness=0.0).fit(Y)


def test_simulation_exceedance_fraction(rng):
    bins = np.repeat([0, 1], 1500)
    Y = laplace_joint(rng, bins.size, [0.4, 0.7], bins)
    ht = HeffernanTawn(tau_dep=0.7, roughness=1.0).fit(Y, bins, 2)
    n = 20_000
    S, sb = ht.simulate(n, rng, [0.3, 0.7])
    frac = np.mean(S[:, 0] > ht.phi_)
    assert abs(frac - 0.3) < 4 * np.sqrt(0.3 * 0.7 / n)
    assert abs(np.mean(sb == 1) - 0.7) < 4 * np.sqrt(0.21 / n)
    assert np.all(ht.simulate(500, rng, [0.3, 0.7], subset=[1])[1] == 1)


def test_comonotone_and_independent_limits(rng):
    n = 200
    resid = [np.zeros((5, 1))]
    below = rng.laplace(size=(50, 2))
    como = HeffernanTawn.from_params([[1.0]], [0.0], [0.0], [1e-10], [2], 0.5, resid, below, np.zeros(50))
    x = np.linspace(0.5, 5.0, n)
    assert np.allclose(como.conditional_draw(x, np.zeros(n, int), rng)[:, 0], x)
    resid = [rng.standard_normal((4000, 1))]
    ind = HeffernanTawn.from_params([[0.0]], [0.0], [0.0], [1.0], [2], 0.5, resid, below, np.zeros(50))
    draws = ind.conditional_draw(np.full(4000, 6.0), np.zeros(4000, int), rng)[:, 0]
    assert abs(draws.mean()) < 0.1
    assert abs(np.corrcoef(np.linspace(0.7, 8, 4000), ind.conditional_draw(
        np.linspace(0.7, 8, 4000), np.zeros(4000, int), rng)[:, 0])[0, 1]) < 0.06


def test_simulate_joint_physical_scale(rng):
    ms = margin_models(B=2, p=[0.5, 0.5])
    bins = np.repeat([0, 1], 1500)
    Y = laplace_joint(rng, bins.size, [0.5, 0.5], bins)
    ht = HeffernanTawn(tau_dep=0.7, roughness=1.0).fit(Y, bins, 2)
    X, xb = simulate_joint(ht, ms, 5000, seed=4)
    assert X.shape == (5000, 2)
    assert np.all(X[:, 0] >= ms[0].gamma_.l.min())
    X2, _ = simulate_joint(ht, ms, 5000, seed=4)
    assert np.array_equal(X, X2)


def test_conditional_return_methods_agree(rng):
    ms = margin_models(B=2, p=[0.5, 0.5], rate=3.0)
    bins = np.repeat([0, 1], 2000)
    Y = laplace_joint(rng, bins.size, [0.3, 0.7], bins)
    ht = HeffernanTawn(tau_dep=0.7, roughness=1.0).fit(Y, bins, 2)
    a = conditional_return_distribution(ht, ms, 20.0, n_samples=3000, seed=1, method="density")
    b = conditional_return_distribution(ht, ms, 20.0, n_samples=3000, seed=2, method="simulation")
    assert a.associated.shape == (3000, 1)
    for q in (0.25, 0.5, 0.75):
        assert a.quantile(0, q) == pytest.approx(b.quantile(0, q), rel=0.05)
    assert np.median(a.conditioning) == pytest.approx(np.median(b.conditioning), rel=0.03)
    assert ms[1].gamma_.l[0] < a.mode(0) < a.associated.max()
    with pytest.raises(ValueError):
        conditional_return_distribution(ht, ms, 0.0)
