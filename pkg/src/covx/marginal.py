"""Piecewise-constant marginal model: gamma bulk, generalised Pareto tail.

For one variate and ``B`` covariate bins, each bin ``b`` carries a
three-parameter gamma distribution ``(omega_b, kappa_b, l_b)`` fitted to all
of the bin's data, a threshold ``psi_b`` at the gamma ``tau``-quantile and a
GP scale ``nu_b``. The GP shape ``xi`` is shared by all bins. Across-bin
variation of ``nu`` is regulated by a variance penalty whose coefficient is
chosen by k-fold cross-validation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError, NumericalError
from .optim import kfold_split, nelder_mead, newton_raphson, rng_stream

MIN_GAMMA_OCCUPANCY = 5
LOCATION_OFFSET = 1e-3
XI_ZERO = 1e-8
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-2, 4, 13))


# ---------------------------------------------------------------------------
# gamma distribution
# ---------------------------------------------------------------------------


@dataclass
class GammaFit:
    """Per-bin three-parameter gamma fits for one variate (arrays of length B)."""

    omega: np.ndarray
    kappa: np.ndarray
    l: np.ndarray
    sparse: np.ndarray = field(default=None)

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        self.l = np.atleast_1d(np.asarray(self.l, dtype=float))
        if self.sparse is None:
            self.sparse = np.zeros(self.omega.shape, dtype=bool)
        self.sparse = np.atleast_1d(np.asarray(self.sparse, dtype=bool))
        if np.any(self.omega <= 0) or np.any(self.kappa <= 0):
            raise DataError("gamma shape and scale must be positive")


def gamma_cdf(y, omega, kappa, l):
    """Gamma CDF with scale convention, ``gammainc(omega, (y - l) / kappa)``."""
    y = np.asarray(y, dtype=float)
    x = np.maximum((y - l) / kappa, 0.0)
    return gammainc(omega, x)


def gamma_logpdf(y, omega, kappa, l):
    y = np.asarray(y, dtype=float)
    x = y - l
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (omega - 1.0) * np.log(x) - x / kappa - omega * np.log(kappa) - gammaln(omega)
    return np.where(x > 0, out, -np.inf)


def gamma_pdf(y, omega, kappa, l):
    return np.exp(gamma_logpdf(y, omega, kappa, l))


def gamma_quantile(p, omega, kappa, l, rtol: float = 1e-12):
    """Inverse gamma CDF by bisection on the standardized scale.

    Raises:
        ValueError: if any ``p`` lies outside (0, 1).
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("gamma quantile requires probabilities in (0, 1)")
    omega, kappa, l, p = np.broadcast_arrays(
        np.asarray(omega, float), np.asarray(kappa, float), np.asarray(l, float), p
    )
    lo = np.zeros(p.shape)
    hi = np.maximum(omega, 1.0)
    for _ in range(200):
        short = gammainc(omega, hi) < p
        if not np.any(short):
            break
        hi = np.where(short, 2.0 * hi, hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        below = gammainc(omega, mid) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    return l + kappa * 0.5 * (lo + hi)


def fit_gamma_bin(data, location_quantile: float = 0.0) -> GammaFit:
    """Three-parameter gamma fit for one bin.

    The location is set just below a low empirical quantile of the data,
    ``quantile(data, location_quantile) - 1e-3 * range(data)``. Shape and
    scale then maximize the likelihood of the points above the location,
    found by simplex search on log parameters.

    Raises:
        DataError: if fewer than two points lie above the location.
    """
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise DataError("cannot fit a gamma distribution to an empty bin")
    span = float(np.ptp(x))
    if span == 0.0:
        span = max(abs(float(x[0])), 1.0)
    loc = float(np.quantile(x, location_quantile)) - LOCATION_OFFSET * span
    r = x[x > loc] - loc
    if r.size < 2:
        raise DataError("too few points above the gamma location")
    n = r.size
    mean_r = float(r.mean())
    mean_log = float(np.log(r).mean())

    def nll(theta):
        omega, kappa = np.exp(theta)
        return n * ((1.0 - omega) * mean_log + mean_r / kappa + omega * theta[1] + gammaln(omega))

    var_r = float(r.var()) or mean_r**2
    omega0 = min(max(mean_r**2 / var_r, 1e-2), 1e3)
    res = nelder_mead(nll, [np.log(omega0), np.log(mean_r / omega0)], step=0.1)
    for _ in range(3):
        again = nelder_mead(nll, res.x_min, step=0.05)
        if again.f_min >= res.f_min - 1e-10:
            break
        res = again
    omega, kappa = np.exp(res.x_min)
    return GammaFit([omega], [kappa], [loc])


def threshold_from_gamma(fit: GammaFit, tau: float) -> np.ndarray:
    """Threshold per bin: the gamma ``tau``-quantile (``tau = 0`` gives ``l``)."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    if tau == 0.0:
        return fit.l.copy()
    return gamma_quantile(tau, fit.omega, fit.kappa, fit.l)


# ---------------------------------------------------------------------------
# generalised Pareto distribution
# ---------------------------------------------------------------------------


def _check_nu(nu):
    if np.any(np.asarray(nu) <= 0):
        raise ValueError("GP scale must be positive")


def gp_cdf(y, xi, nu, psi):
    """GP CDF above ``psi``; values beyond a finite upper endpoint give 1."""
    _check_nu(nu)
    z = np.maximum(np.asarray(y, dtype=float) - psi, 0.0)
    if abs(xi) < XI_ZERO:
        return -np.expm1(-z / nu)
    base = 1.0 + xi * z / nu
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-np.log(np.maximum(base, 0.0)) / xi)
    return np.where(base > 0, out, 1.0)


def gp_logpdf(y, xi, nu, psi):
    _check_nu(nu)
    z = np.asarray(y, dtype=float) - psi
    if abs(xi) < XI_ZERO:
        out = -np.log(nu) - z / nu
        return np.where(z >= 0, out, -np.inf)
    base = 1.0 + xi * z / nu
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.log(nu) - (1.0 / xi + 1.0) * np.log(base)
    return np.where((z >= 0) & (base > 0), out, -np.inf)


def gp_pdf(y, xi, nu, psi):
    return np.exp(gp_logpdf(y, xi, nu, psi))


def gp_quantile(q, xi, nu, psi):
    q = np.asarray(q, dtype=float)
    if abs(xi) < XI_ZERO:
        return psi - nu * np.log1p(-q)
    return psi + nu / xi * np.expm1(-xi * np.log1p(-q))


def roughness_penalty(values) -> float:
    """Across-bin variance ``mean(v**2) - mean(v)**2`` (never negative)."""
    return float(np.var(np.asarray(values, dtype=float)))


@dataclass
class GPFit:
    """Shared GP shape, per-bin scales and thresholds for one variate."""

    xi: float
    nu: np.ndarray
    psi: np.ndarray
    tau: float
    lam: float
    empty: np.ndarray = field(default=None)
    converged: bool = True

    def __post_init__(self):
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        self.psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        if self.empty is None:
            self.empty = np.zeros(self.nu.shape, dtype=bool)


class _GPProblem:
    """Penalized GP negative log likelihood in unconstrained coordinates.

    Coordinates are ``[atanh(xi), s_b for bins with exceedances]`` where
    ``s_b = log(nu_b)`` (``log_scale=True``, used by the simplex) or
    ``s_b = nu_b`` with ``+inf`` returned for ``nu_b <= 0``. The Newton route
    uses the latter: on log scale a very large penalty is reduced by
    shrinking every scale toward zero, which drags Newton steps far from the
    optimum. Bins without exceedances are tied to the mean scale of the
    others, which is where the variance penalty alone puts them.
    ``objective`` and ``gradient`` are divided by the number of exceedances
    so that minimizer tolerances do not depend on sample size.
    """

    def __init__(self, z, bins, active, n_bins, lam, log_scale=True):
        self.z = z
        self.active = active
        remap = -np.ones(n_bins, dtype=int)
        remap[active] = np.arange(active.size)
        self.k = remap[bins]
        self.n_bins = n_bins
        self.lam = lam
        self.log_scale = log_scale
        self.scale = 1.0 / z.size

    def pack(self, xi, nu):
        return np.concatenate([[np.arctanh(xi)], np.log(nu) if self.log_scale else nu])

    def unpack(self, theta):
        xi = float(np.tanh(theta[0]))
        nu = np.exp(theta[1:]) if self.log_scale else np.asarray(theta[1:])
        return xi, nu

    def penalty(self, nu):
        return self.lam * np.sum((nu - nu.mean()) ** 2) / self.n_bins

    def nll(self, xi, nu):
        nu_i = nu[self.k]
        if abs(xi) < XI_ZERO:
            return float(np.sum(np.log(nu_i) + self.z / nu_i))
        t = xi * self.z / nu_i
        if np.any(t <= -1.0):
            return np.inf
        return float(np.sum(np.log(nu_i)) + (1.0 + 1.0 / xi) * np.sum(np.log1p(t)))

    def objective(self, theta):
        if not np.all(np.isfinite(theta)) or abs(theta[0]) > 20:
            return np.inf
        if self.log_scale and np.any(np.abs(theta[1:]) > 700):
            return np.inf
        if not self.log_scale and np.any(theta[1:] <= 0):
            return np.inf
        xi, nu = self.unpack(theta)
        f = self.nll(xi, nu)
        if not np.isfinite(f):
            return np.inf
        return (f + self.penalty(nu)) * self.scale

    def gradient(self, theta):
        xi, nu = self.unpack(theta)
        if np.any(nu <= 0):
            return np.full(theta.shape, np.nan)
        nu_i = nu[self.k]
        a = self.z / nu_i
        t = xi * a
        if np.any(t <= -1.0):
            return np.full(theta.shape, np.nan)
        # d nll_i / d nu_i and d nll_i / d xi
        dnu_i = (1.0 - (1.0 + xi) * a / (1.0 + t)) / nu_i
        if abs(xi) >= 1e-5:
            dxi_i = -np.log1p(t) / xi**2 + (1.0 + 1.0 / xi) * a / (1.0 + t)
        else:
            dxi_i = (a - a**2 / 2) + 2 * xi * (a**3 / 3 - a**2 / 2) + 3 * xi**2 * (a**3 / 3 - a**4 / 4)
        g = np.empty(theta.shape)
        g[0] = np.sum(dxi_i) * (1.0 - xi**2)
        dnu = np.bincount(self.k, weights=dnu_i, minlength=nu.size)
        dnu += 2.0 * self.lam * (nu - nu.mean()) / self.n_bins
        g[1:] = dnu * nu if self.log_scale else dnu
        return g * self.scale


def fit_gp_penalized(
    y,
    bins,
    psi,
    lam: float,
    tau: float = 0.0,
    n_bins: int | None = None,
    method: str = "nelder_mead",
) -> GPFit:
    """Penalized maximum likelihood GP fit to exceedances of per-bin thresholds.

    Minimizes ``-log L_GP + lam * var_b(nu_b)`` jointly over the shared shape
    and per-bin scales, starting from ``xi = -0.1`` and ``nu_b`` equal to the
    mean exceedance of the bin. ``xi`` is kept inside (-1, 1).

    Args:
        y: Values of one variate.
        bins: Zero-based bin index of each value.
        psi: Threshold per bin.
        lam: Roughness coefficient, ``>= 0``.
        tau: Non-exceedance probability that produced ``psi`` (stored only).
        n_bins: Number of bins; defaults to ``len(psi)``.
        method: ``"nelder_mead"`` or ``"newton_raphson"``.

    Raises:
        DataError: if no value exceeds its threshold.
    """
    y = np.asarray(y, dtype=float)
    bins = np.asarray(bins, dtype=int)
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    n_bins = psi.size if n_bins is None else n_bins
    if lam < 0:
        raise ValueError("roughness coefficient must be non-negative")
    exc = y > psi[bins]
    if not np.any(exc):
        raise DataError("no threshold exceedances in any bin")
    z = y[exc] - psi[bins[exc]]
    b_exc = bins[exc]
    counts = np.bincount(b_exc, minlength=n_bins)
    active = np.flatnonzero(counts > 0)
    prob = _GPProblem(z, b_exc, active, n_bins, lam, log_scale=(method != "newton_raphson"))

    mean_z = np.bincount(b_exc, weights=z, minlength=n_bins)[active] / counts[active]
    max_z = np.array([z[b_exc == b].max() for b in active])
    # keep the start inside the support implied by xi = -0.1
    nu0 = np.maximum(mean_z, 0.11 * max_z)
    theta0 = prob.pack(-0.1, nu0)

    res = _minimize(prob.objective, prob.gradient, theta0, method)
    xi, nu_active = prob.unpack(res.x_min)
    nu = np.full(n_bins, nu_active.mean())
    nu[active] = nu_active
    return GPFit(xi, nu, psi.copy(), tau, lam, counts == 0, res.converged)


def _minimize(objective, gradient, theta0, method):
    if method == "nelder_mead":
        res = nelder_mead(objective, theta0, step=0.1)
        for _ in range(5):
            again = nelder_mead(objective, res.x_min, step=0.05)
            improved = again.f_min < res.f_min - 1e-9 * max(1.0, abs(res.f_min))
            if again.f_min <= res.f_min:
                res = again
            if not improved:
                break
        return res
    if method == "newton_raphson":
        res = newton_raphson(objective, gradient, theta0, max_step=1.0)
        if not res.converged:
            # polish with the simplex; it tolerates kinks and flat directions
            alt = nelder_mead(objective, res.x_min, step=0.05)
            if alt.f_min < res.f_min:
                res = alt
        return res
    raise ValueError(f"unknown method {method!r}")


def gp_nll(y, bins, fit: GPFit) -> float:
    """Unpenalized GP negative log likelihood of exceedances under ``fit``."""
    y = np.asarray(y, dtype=float)
    bins = np.asarray(bins, dtype=int)
    exc = y > fit.psi[bins]
    if not np.any(exc):
        return 0.0
    b = bins[exc]
    return float(-np.sum(gp_logpdf(y[exc], fit.xi, fit.nu[b], fit.psi[b])))


def cv_scores_marginal(
    y, bins, psi, lambda_grid, k: int = 10, seed: int = 0, n_bins=None, method="nelder_mead"
) -> np.ndarray:
    """Summed hold-out GP negative log likelihood for each roughness value.

    Folds with no held-out exceedances contribute zero; a fold whose
    training part has no exceedances also contributes zero.
    """
    y = np.asarray(y, dtype=float)
    bins = np.asarray(bins, dtype=int)
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    n_bins = psi.size if n_bins is None else n_bins
    folds = kfold_split(y.size, k, rng_stream(seed, 0))
    scores = np.zeros(len(lambda_grid))
    for f in folds:
        train = np.ones(y.size, dtype=bool)
        train[f] = False
        if not np.any(y[train] > psi[bins[train]]) or not np.any(y[f] > psi[bins[f]]):
            continue
        for j, lam in enumerate(lambda_grid):
            fit = fit_gp_penalized(y[train], bins[train], psi, lam, n_bins=n_bins, method=method)
            scores[j] += gp_nll(y[f], bins[f], fit)
    return scores


def pick_lambda(lambda_grid, scores) -> float:
    """Grid value with the lowest score; ties go to the larger value."""
    grid = np.asarray(lambda_grid, dtype=float)
    scores = np.asarray(scores, dtype=float)
    scores = np.where(np.isnan(scores), np.inf, scores)
    best = np.flatnonzero(scores == scores.min())
    return float(grid[best[np.argmax(grid[best])]])


def select_lambda_marginal(
    y, bins, psi, lambda_grid=DEFAULT_LAMBDA_GRID, k=10, seed=0, n_bins=None, method="nelder_mead"
) -> float:
    scores = cv_scores_marginal(y, bins, psi, lambda_grid, k, seed, n_bins, method)
    return pick_lambda(lambda_grid, scores)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


class MarginalModel(TransformerMixin, BaseEstimator):
    """Gamma-GP marginal model for one variate over covariate bins.

    Parameters
    ----------
    tau : float
        Threshold non-exceedance probability in [0, 1).
    roughness : float or None
        GP scale roughness coefficient. ``None`` selects it from
        ``lambda_grid`` by cross-validation.
    lambda_grid : sequence of float, optional
        Candidate roughness values (default 13 log-spaced from 1e-2 to 1e4).
    n_folds : int
        Cross-validation folds.
    location_quantile : float
        Empirical quantile used for the gamma location.
    method : {"nelder_mead", "newton_raphson"}
        GP minimizer.
    random_state : int
        Seed for fold assignment.
    name : str
        Variate label, carried into serialized output.

    ``transform`` maps values to the uniform scale through the fitted
    marginal CDF; ``inverse_transform`` maps uniforms back.
    """

    def __init__(
        self,
        tau=0.8,
        roughness=None,
        lambda_grid=None,
        n_folds=10,
        location_quantile=0.0,
        method="nelder_mead",
        random_state=0,
        name="Y",
    ):
        self.tau = tau
        self.roughness = roughness
        self.lambda_grid = lambda_grid
        self.n_folds = n_folds
        self.location_quantile = location_quantile
        self.method = method
        self.random_state = random_state
        self.name = name

    # -- fitting ----------------------------------------------------------

    def fit(self, y, bins=None, n_bins=None, rate=None):
        """Fit gamma, threshold and penalized GP parts.

        Args:
            y: Values of the variate, shape (N,).
            bins: Zero-based bin index per value (all zeros if omitted).
            n_bins: Number of bins, at least ``max(bins) + 1``.
            rate: Storms per year; needed for T-year quantities.
        """
        y = np.asarray(y, dtype=float).ravel()
        bins = np.zeros(y.size, dtype=int) if bins is None else np.asarray(bins, dtype=int).ravel()
        if y.size != bins.size:
            raise DataError("values and bin indices differ in length")
        if y.size == 0:
            raise DataError("cannot fit a marginal model to an empty sample")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite values")
        n_bins = int(bins.max()) + 1 if n_bins is None else int(n_bins)
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")

        self.n_bins_ = n_bins
        self.gamma_ = self._fit_gamma(y, bins, n_bins)
        psi = threshold_from_gamma(self.gamma_, self.tau)

        if self.roughness is None:
            grid = DEFAULT_LAMBDA_GRID if self.lambda_grid is None else tuple(self.lambda_grid)
            self.cv_grid_ = np.asarray(grid, dtype=float)
            self.cv_scores_ = cv_scores_marginal(
                y, bins, psi, grid, self.n_folds, self.random_state, n_bins, self.method
            )
            lam = pick_lambda(grid, self.cv_scores_)
        else:
            lam = float(self.roughness)
        self.gp_ = fit_gp_penalized(y, bins, psi, lam, self.tau, n_bins, self.method)
        self.roughness_ = lam
        self.p_ = np.bincount(bins, minlength=n_bins) / y.size
        self.rate_ = None if rate is None else float(rate)
        return self

    def _fit_gamma(self, y, bins, n_bins):
        counts = np.bincount(bins, minlength=n_bins)
        pooled = None
        omega, kappa, loc = np.empty(n_bins), np.empty(n_bins), np.empty(n_bins)
        sparse = counts < MIN_GAMMA_OCCUPANCY
        for b in range(n_bins):
            if sparse[b]:
                if pooled is None:
                    pooled = fit_gamma_bin(y, self.location_quantile)
                g = pooled
            else:
                g = fit_gamma_bin(y[bins == b], self.location_quantile)
            omega[b], kappa[b], loc[b] = g.omega[0], g.kappa[0], g.l[0]
        return GammaFit(omega, kappa, loc, sparse)

    @classmethod
    def from_params(cls, omega, kappa, l, tau, xi, nu, p=None, rate=None, roughness=0.0, name="Y"):
        """Model with given parameters (e.g. a simulation truth)."""
        model = cls(tau=tau, roughness=roughness, name=name)
        model.gamma_ = GammaFit(omega, kappa, l)
        n_bins = model.gamma_.omega.size
        nu = np.broadcast_to(np.asarray(nu, float), (n_bins,)).copy()
        _check_nu(nu)
        if not -1.0 < xi < 1.0:
            raise DataError("GP shape must lie in (-1, 1)")
        psi = threshold_from_gamma(model.gamma_, tau)
        model.gp_ = GPFit(float(xi), nu, psi, tau, roughness)
        model.n_bins_ = n_bins
        model.roughness_ = roughness
        model.p_ = np.full(n_bins, 1.0 / n_bins) if p is None else np.asarray(p, dtype=float)
        model.rate_ = None if rate is None else float(rate)
        return model

    # -- shorthand for fitted parameters ------------------------------------

    @property
    def xi_(self) -> float:
        return self.gp_.xi

    @property
    def nu_(self) -> np.ndarray:
        return self.gp_.nu

    @property
    def psi_(self) -> np.ndarray:
        return self.gp_.psi

    # -- distribution functions -------------------------------------------

    def _bins(self, y, bins):
        check_is_fitted(self, "gp_")
        y = np.asarray(y, dtype=float)
        bins = np.broadcast_to(np.asarray(bins, dtype=int), y.shape)
        if np.any(bins < 0) or np.any(bins >= self.n_bins_):
            raise ValueError("invalid bin index")
        return y, bins

    def cdf(self, y, bins):
        """Two-piece CDF: gamma strictly below ``psi``, ``tau + (1-tau) F_GP`` from ``psi``."""
        y, bins = self._bins(y, bins)
        g, gp = self.gamma_, self.gp_
        lo = gamma_cdf(y, g.omega[bins], g.kappa[bins], g.l[bins])
        hi = self.tau + (1.0 - self.tau) * gp_cdf(y, gp.xi, gp.nu[bins], gp.psi[bins])
        return np.where(y < gp.psi[bins], lo, hi)

    def pdf(self, y, bins):
        y, bins = self._bins(y, bins)
        g, gp = self.gamma_, self.gp_
        lo = gamma_pdf(y, g.omega[bins], g.kappa[bins], g.l[bins])
        hi = (1.0 - self.tau) * gp_pdf(y, gp.xi, gp.nu[bins], gp.psi[bins])
        return np.where(y < gp.psi[bins], lo, hi)

    def quantile(self, u, bins):
        """Inverse of :meth:`cdf` for ``u`` in (0, 1)."""
        u, bins = self._bins(u, bins)
        g, gp = self.gamma_, self.gp_
        out = np.empty(u.shape)
        low = u < self.tau
        if np.any(low):
            bl = bins[low]
            out[low] = gamma_quantile(u[low], g.omega[bl], g.kappa[bl], g.l[bl])
        high = ~low
        if np.any(high):
            bh = bins[high]
            q = (u[high] - self.tau) / (1.0 - self.tau)
            out[high] = gp_quantile(q, gp.xi, gp.nu[bh], gp.psi[bh])
        return out

    def transform(self, y, bins=None):
        """Probability integral transform to the uniform scale."""
        y = np.asarray(y, dtype=float)
        return self.cdf(y, np.zeros(y.shape, int) if bins is None else bins)

    def inverse_transform(self, u, bins=None):
        u = np.asarray(u, dtype=float)
        return self.quantile(u, np.zeros(u.shape, int) if bins is None else bins)

    def sample(self, n, rng, bins=None):
        """Draw ``n`` values; bins drawn from ``p_`` unless given."""
        if bins is None:
            bins = rng.choice(self.n_bins_, size=n, p=self.p_ / self.p_.sum())
        u = rng.random(n)
        u = np.where(u == 0.0, np.finfo(float).tiny, u)
        return self.quantile(u, bins), np.asarray(bins)

    def upper_endpoint(self, bins=None):
        bins = np.arange(self.n_bins_) if bins is None else np.asarray(bins)
        if self.xi_ >= 0:
            return np.full(np.shape(bins), np.inf)
        return self.psi_[bins] - self.nu_[bins] / self.xi_

    # -- pooled and T-year quantities --------------------------------------

    def _subset(self, subset):
        check_is_fitted(self, "gp_")
        if subset is None:
            subset = np.arange(self.n_bins_)
        subset = np.atleast_1d(np.asarray(subset, dtype=int))
        if subset.size == 0:
            raise ValueError("bin subset is empty")
        w = self.p_[subset]
        if w.sum() <= 0:
            raise DataError("bin subset has zero occurrence probability")
        return subset, w

    def pooled_cdf(self, y, subset=None):
        """CDF of a random event from ``subset`` with rescaled bin probabilities."""
        subset, w = self._subset(subset)
        y = np.asarray(y, dtype=float)
        F = np.stack([self.cdf(y, np.full(y.shape, b)) for b in subset], axis=-1)
        return F @ (w / w.sum())

    def subset_rate(self, subset=None) -> float:
        subset, w = self._subset(subset)
        if self.rate_ is None:
            raise ValueError("model has no storm rate; pass rate= to fit")
        return self.rate_ * float(w.sum())

    def t_year_max_cdf(self, y, T, subset=None):
        """CDF of the T-year maximum, ``exp(-T rho_S (1 - F_S(y)))``."""
        if T <= 0:
            raise ValueError("return period must be positive")
        rho = self.subset_rate(subset)
        return np.exp(-T * rho * (1.0 - self.pooled_cdf(y, subset)))

    def t_year_max_pdf(self, y, T, subset=None):
        subset, w = self._subset(subset)
        rho = self.subset_rate(subset)
        y = np.asarray(y, dtype=float)
        f = np.stack([self.pdf(y, np.full(y.shape, b)) for b in subset], axis=-1) @ (w / w.sum())
        return T * rho * f * self.t_year_max_cdf(y, T, subset)

    def t_year_max_quantile(self, prob, T, subset=None, rtol=1e-10):
        """Vectorized inverse of :meth:`t_year_max_cdf` by bisection."""
        subset, _ = self._subset(subset)
        prob = np.atleast_1d(np.asarray(prob, dtype=float))
        if np.any(prob <= 0) or np.any(prob >= 1):
            raise ValueError("probability must lie in (0, 1)")
        lo = np.full(prob.shape, float(self.gamma_.l[subset].min()))
        upper = self.upper_endpoint(subset).max()
        if np.isfinite(upper):
            hi = np.full(prob.shape, upper)
        else:
            span = float(self.psi_[subset].max() - lo[0]) + 10.0 * float(self.nu_[subset].max())
            hi = lo + span
            for _ in range(200):
                short = self.t_year_max_cdf(hi, T, subset) < prob
                if not np.any(short):
                    break
                hi = np.where(short, lo + 2.0 * (hi - lo), hi)
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            below = self.t_year_max_cdf(mid, T, subset) < prob
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= rtol * np.maximum(np.abs(hi), 1e-300)):
                break
        return 0.5 * (lo + hi)

    def return_value(self, T, prob=np.exp(-1.0), subset=None) -> float:
        """T-year return value: quantile ``prob`` of the T-year maximum."""
        value = float(self.t_year_max_quantile([prob], T, subset)[0])
        upper = self.upper_endpoint(self._subset(subset)[0]).max()
        # at the endpoint the event CDF has saturated to 1 in floating point
        if np.isfinite(upper) and (value >= upper * (1 - 1e-12) or self.pooled_cdf(value, subset) >= 1.0):
            warnings.warn("probability not reached below the GP upper endpoint", RuntimeWarning)
        return value

    def t_year_max_mode(self, T, subset=None, n_grid=4001) -> float:
        """Most probable T-year maximum, located on a quantile-spaced grid."""
        lo, hi = self.t_year_max_quantile([1e-4, 1 - 1e-4], T, subset)
        grid = np.linspace(lo, hi, n_grid)
        return float(grid[np.argmax(self.t_year_max_pdf(grid, T, subset))])

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "gp_")
        g, gp = self.gamma_, self.gp_
        return {
            "variate": self.name,
            "xi": gp.xi,
            "tau": float(self.tau),
            "lambda": float(self.roughness_),
            "rho": self.rate_,
            "bins": [
                {
                    "omega": float(g.omega[b]),
                    "kappa": float(g.kappa[b]),
                    "l": float(g.l[b]),
                    "nu": float(gp.nu[b]),
                    "psi": float(gp.psi[b]),
                    "p": float(self.p_[b]),
                    "sparse": bool(g.sparse[b]),
                    "empty_tail": bool(gp.empty[b]),
                }
                for b in range(self.n_bins_)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalModel":
        bins = d["bins"]
        model = cls(tau=d["tau"], roughness=d["lambda"], name=d.get("variate", "Y"))
        model.gamma_ = GammaFit(
            [b["omega"] for b in bins],
            [b["kappa"] for b in bins],
            [b["l"] for b in bins],
            [b.get("sparse", False) for b in bins],
        )
        model.gp_ = GPFit(
            float(d["xi"]),
            [b["nu"] for b in bins],
            [b["psi"] for b in bins],
            d["tau"],
            d["lambda"],
            np.array([b.get("empty_tail", False) for b in bins]),
        )
        model.n_bins_ = len(bins)
        model.roughness_ = float(d["lambda"])
        model.p_ = np.array([b["p"] for b in bins], dtype=float)
        model.rate_ = d.get("rho")
        return model


# -- functional aliases ------------------------------------------------------


def marginal_cdf(y, b, model: MarginalModel):
    return model.cdf(y, b)


def pooled_event_cdf(y, bin_subset, model: MarginalModel):
    return model.pooled_cdf(y, bin_subset)


def t_year_max_cdf(y, T, rho, bin_subset, model: MarginalModel):
    """T-year maximum CDF with an explicit annual storm rate ``rho``."""
    subset, w = model._subset(bin_subset)
    return np.exp(-T * rho * float(w.sum()) * (1.0 - model.pooled_cdf(y, subset)))


def return_value(T, prob, bin_subset, model: MarginalModel) -> float:
    return model.return_value(T, prob, bin_subset)
