"""Conditional extremes (Heffernan-Tawn) dependence on standard margins.

The conditioning variate is column 0. Above a threshold ``phi`` on the
standard margin, each associated variate ``j`` is modelled in bin ``b`` as

    Y_j | Y_0 = y  ~  alpha_bj * y + y**beta_j * (mu_j + sigma_j * W_j)

with ``W_j`` generalised Gaussian of zero mean, unit variance and shape
``delta_j``. Only ``alpha`` varies across bins; its across-bin variance is
penalized. Residuals of the fit are kept per bin and resampled jointly when
simulating.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import gaussian_kde
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .marginal import DEFAULT_LAMBDA_GRID, MarginalModel, pick_lambda
from .optim import kfold_split, nelder_mead, newton_raphson, rng_stream

CLAMP = 1e-12
MIN_EXCEEDANCES = 10
SIGMA_FLOOR = 1e-10

# ---------------------------------------------------------------------------
# standard margins
# ---------------------------------------------------------------------------


def laplace_cdf(y):
    y = np.asarray(y, dtype=float)
    return np.where(y <= 0, 0.5 * np.exp(np.minimum(y, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(y, 0.0)))


def laplace_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("Laplace quantile requires probabilities in (0, 1)")
    return np.where(p <= 0.5, np.log(2.0 * np.minimum(p, 0.5)), -np.log(2.0 * (1.0 - np.maximum(p, 0.5))))


def gumbel_cdf(y):
    return np.exp(-np.exp(-np.asarray(y, dtype=float)))


def gumbel_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("Gumbel quantile requires probabilities in (0, 1)")
    return -np.log(-np.log(p))


MARGINS = {
    "laplace": (laplace_cdf, laplace_quantile),
    "gumbel": (gumbel_cdf, gumbel_quantile),
}


def _margin(margin):
    try:
        return MARGINS[margin]
    except KeyError:
        raise ValueError(f"unknown margin {margin!r}; use 'laplace' or 'gumbel'") from None


@dataclass
class LaplaceSample:
    """Sample on a standard margin with its bin allocation.

    ``clamped`` marks entries whose marginal CDF hit 0 or 1 and was clamped
    to ``[1e-12, 1 - 1e-12]`` before the quantile transform.
    """

    y: np.ndarray
    bins: np.ndarray
    n_bins: int
    clamped: np.ndarray
    margin: str = "laplace"


def to_laplace(values, bins, marginals, n_bins=None, margin="laplace") -> LaplaceSample:
    """Probability integral transform of physical values to a standard margin.

    Args:
        values: Array (N, D) on the physical scale.
        bins: Zero-based bin index per event.
        marginals: One fitted :class:`MarginalModel` per column.
    """
    values = np.asarray(values, dtype=float)
    values = values.reshape(values.shape[0], -1)
    bins = np.asarray(bins, dtype=int)
    if values.shape[1] != len(marginals):
        raise DataError("need one marginal model per variate")
    _, quantile = _margin(margin)
    u = np.column_stack([m.cdf(values[:, d], bins) for d, m in enumerate(marginals)])
    clamped = (u < CLAMP) | (u > 1 - CLAMP)
    if np.any(clamped):
        warnings.warn(f"{int(clamped.sum())} marginal CDF values clamped", RuntimeWarning)
    u = np.clip(u, CLAMP, 1 - CLAMP)
    n_bins = marginals[0].n_bins_ if n_bins is None else n_bins
    return LaplaceSample(quantile(u), bins, n_bins, clamped, margin)


def from_laplace(y, bins, model: MarginalModel, margin="laplace"):
    """Map standard-margin values of one variate back to the physical scale."""
    cdf, _ = _margin(margin)
    u = np.clip(cdf(y), CLAMP, 1 - CLAMP)
    return model.quantile(u, bins)


# ---------------------------------------------------------------------------
# generalised Gaussian residual density
# ---------------------------------------------------------------------------


def gg_kappa(delta):
    """Scale factor with ``kappa(delta)**2 = Gamma(1/delta) / Gamma(3/delta)``."""
    return np.exp(0.5 * (gammaln(1.0 / delta) - gammaln(3.0 / delta)))


def gg_logpdf(w, m, s2, delta):
    """Log density of the generalised Gaussian with mean ``m`` and variance ``s2``."""
    if delta not in (1, 2):
        raise ValueError("delta must be 1 or 2")
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 <= 0):
        raise ValueError("variance must be positive")
    s = np.sqrt(s2)
    k = gg_kappa(delta)
    z = np.abs((np.asarray(w, dtype=float) - m) / (k * s))
    return np.log(delta) - np.log(2.0 * k * s) - gammaln(1.0 / delta) - z**delta


def gg_sample(rng, size, delta):
    """Zero-mean, unit-variance generalised Gaussian draws."""
    if delta == 2:
        return rng.standard_normal(size)
    if delta == 1:
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size)
    raise ValueError("delta must be 1 or 2")


# ---------------------------------------------------------------------------
# penalized likelihood for one associated variate
# ---------------------------------------------------------------------------


class _HTProblem:
    """Penalized HT negative log likelihood for one associated variate.

    Coordinates are ``[a_b for bins with exceedances, log(1 - beta), mu,
    log(sigma)]`` where ``a_b = atanh(alpha_b)`` (simplex) or ``a_b =
    alpha_b`` with ``+inf`` outside (-1, 1) (Newton; keeps the penalty
    quadratic in the coordinates). Empty bins are tied to the mean slope.
    Objective and gradient are divided by the number of exceedances.
    """

    def __init__(self, x, v, bins, active, n_bins, lam, delta, tanh_alpha=True):
        self.x = x
        self.v = v
        self.logx = np.log(x)
        remap = -np.ones(n_bins, dtype=int)
        remap[active] = np.arange(active.size)
        self.k = remap[bins]
        self.na = active.size
        self.n_bins = n_bins
        self.lam = lam
        self.delta = delta
        self.kap = gg_kappa(delta)
        self.const = np.log(2.0 * self.kap) + gammaln(1.0 / delta) - np.log(delta)
        self.tanh_alpha = tanh_alpha
        self.scale = 1.0 / x.size

    def pack(self, alpha, beta, mu, sigma):
        a = np.arctanh(alpha) if self.tanh_alpha else np.asarray(alpha, float)
        return np.concatenate([a, [np.log(1.0 - beta), mu, np.log(sigma)]])

    def unpack(self, theta):
        a = theta[: self.na]
        alpha = np.tanh(a) if self.tanh_alpha else a
        beta = 1.0 - np.exp(theta[self.na])
        return alpha, beta, theta[self.na + 1], np.exp(theta[self.na + 2])

    def _feasible(self, theta):
        if not np.all(np.isfinite(theta)):
            return False
        if not self.tanh_alpha and np.any(np.abs(theta[: self.na]) >= 1.0):
            return False
        if self.tanh_alpha and np.any(np.abs(theta[: self.na]) > 20):
            return False
        return abs(theta[self.na]) < 50 and np.log(SIGMA_FLOOR) <= theta[self.na + 2] < 50

    def nll(self, alpha, beta, mu, sigma):
        xb = np.exp(beta * self.logx)
        s = sigma * xb
        w = (self.v - alpha[self.k] * self.x - mu * xb) / (self.kap * s)
        return float(np.sum(np.log(s) + np.abs(w) ** self.delta) + self.const * self.x.size)

    def penalty(self, alpha):
        return self.lam * np.sum((alpha - alpha.mean()) ** 2) / self.n_bins

    def objective(self, theta):
        if not self._feasible(theta):
            return np.inf
        alpha, beta, mu, sigma = self.unpack(theta)
        f = self.nll(alpha, beta, mu, sigma) + self.penalty(alpha)
        return f * self.scale if np.isfinite(f) else np.inf

    def gradient(self, theta):
        if not self._feasible(theta):
            return np.full(theta.shape, np.nan)
        alpha, beta, mu, sigma = self.unpack(theta)
        d = self.delta
        xb = np.exp(beta * self.logx)
        s = sigma * xb
        w = (self.v - alpha[self.k] * self.x - mu * xb) / (self.kap * s)
        aw = np.abs(w)
        dm = -d * aw ** (d - 1) * np.sign(w) / (self.kap * s)
        ds = (1.0 - d * aw**d) / s
        g = np.empty(theta.shape)
        galpha = np.bincount(self.k, weights=dm * self.x, minlength=self.na)
        galpha += 2.0 * self.lam * (alpha - alpha.mean()) / self.n_bins
        g[: self.na] = galpha * (1.0 - alpha**2) if self.tanh_alpha else galpha
        gbeta = np.sum(dm * mu * xb * self.logx + ds * sigma * xb * self.logx)
        g[self.na] = gbeta * -(1.0 - beta)
        g[self.na + 1] = np.sum(dm * xb)
        g[self.na + 2] = np.sum(ds * xb) * sigma
        return g * self.scale


@dataclass
class HTFit:
    """Fitted parameters for one associated variate."""

    alpha: np.ndarray
    beta: float
    mu: float
    sigma: float
    delta: int
    lam: float
    empty: np.ndarray
    converged: bool
    objective: float


def _start_alpha(x, v, bins, active):
    out = np.zeros(active.size)
    for i, b in enumerate(active):
        sel = bins == b
        if sel.sum() >= 3 and np.std(x[sel]) > 0 and np.std(v[sel]) > 0:
            out[i] = np.corrcoef(x[sel], v[sel])[0, 1]
    return np.clip(np.nan_to_num(out), -0.9, 0.9)


def fit_ht_variate(x, v, bins, n_bins, lam, delta=2, method="newton_raphson") -> HTFit:
    """Penalized fit for one associated variate given conditioning exceedances.

    Args:
        x: Conditioning values above the threshold (all positive).
        v: Associated values at the same events.
        bins: Zero-based bin index per event.
        n_bins: Total number of bins.
        lam: Roughness coefficient on the slopes.
        delta: Residual shape, 1 (Laplace) or 2 (Gaussian).
        method: ``"newton_raphson"`` or ``"nelder_mead"``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    bins = np.asarray(bins, dtype=int)
    if np.any(x <= 0):
        raise DataError("conditioning exceedances must be positive")
    counts = np.bincount(bins, minlength=n_bins)
    active = np.flatnonzero(counts > 0)
    prob = _HTProblem(x, v, bins, active, n_bins, lam, delta, tanh_alpha=(method != "newton_raphson"))
    theta0 = prob.pack(_start_alpha(x, v, bins, active), 0.1, 0.0, 1.0)

    if method == "newton_raphson":
        res = newton_raphson(prob.objective, prob.gradient, theta0, max_step=1.0)
        if not res.converged:
            alt = nelder_mead(prob.objective, res.x_min, step=0.05)
            if alt.f_min < res.f_min:
                res = alt
    elif method == "nelder_mead":
        res = nelder_mead(prob.objective, theta0, step=0.1)
        for _ in range(10):
            again = nelder_mead(prob.objective, res.x_min, step=0.02)
            improved = again.f_min < res.f_min - 1e-10
            if again.f_min <= res.f_min:
                res = again
            if not improved:
                break
    else:
        raise ValueError(f"unknown method {method!r}")

    alpha_a, beta, mu, sigma = prob.unpack(res.x_min)
    alpha = np.full(n_bins, alpha_a.mean())
    alpha[active] = alpha_a
    return HTFit(alpha, float(beta), float(mu), float(sigma), int(delta), float(lam), counts == 0,
                 res.converged, float(res.f_min))


def ht_nll(x, v, bins, fit: HTFit) -> float:
    """Unpenalized negative log likelihood of ``(x, v)`` pairs under ``fit``."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 0.0
    xb = x ** fit.beta
    m = fit.alpha[np.asarray(bins, int)] * x + fit.mu * xb
    return float(-np.sum(gg_logpdf(v, m, (fit.sigma * xb) ** 2, fit.delta)))


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


class HeffernanTawn(BaseEstimator):
    """Penalized piecewise-constant conditional extremes model.

    Parameters
    ----------
    tau_dep : float
        Non-exceedance probability of the conditioning threshold on the
        standard margin.
    roughness : float or None
        Slope roughness coefficient; ``None`` selects it by cross-validation
        over ``lambda_grid``. One value is used for every associated variate
        unless a sequence is given.
    lambda_grid : sequence of float, optional
    delta : int or sequence of int
        Residual shape per associated variate (1 or 2).
    method : {"newton_raphson", "nelder_mead"}
    margin : {"laplace", "gumbel"}
    pool_residuals : bool
        Resample residuals from all bins instead of the event's own bin.
    n_folds : int
    random_state : int
    """

    def __init__(
        self,
        tau_dep=0.7,
        roughness=None,
        lambda_grid=None,
        delta=2,
        method="newton_raphson",
        margin="laplace",
        pool_residuals=False,
        n_folds=10,
        random_state=0,
    ):
        self.tau_dep = tau_dep
        self.roughness = roughness
        self.lambda_grid = lambda_grid
        self.delta = delta
        self.method = method
        self.margin = margin
        self.pool_residuals = pool_residuals
        self.n_folds = n_folds
        self.random_state = random_state

    def fit(self, Y, bins=None, n_bins=None):
        """Fit on a standard-margin sample.

        Args:
            Y: Array (N, D), conditioning variate first, or a
                :class:`LaplaceSample`.
            bins: Zero-based bin index per event.
            n_bins: Number of bins.
        """
        if isinstance(Y, LaplaceSample):
            bins = Y.bins if bins is None else bins
            n_bins = Y.n_bins if n_bins is None else n_bins
            Y = Y.y
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] < 2:
            raise DataError("need a conditioning and at least one associated variate")
        bins = np.zeros(Y.shape[0], int) if bins is None else np.asarray(bins, dtype=int)
        n_bins = int(bins.max()) + 1 if n_bins is None else int(n_bins)
        _, quantile = _margin(self.margin)
        self.phi_ = float(quantile(self.tau_dep))
        if self.phi_ <= 0:
            raise ValueError("tau_dep must place the threshold above zero on the standard margin")
        n_assoc = Y.shape[1] - 1
        deltas = np.broadcast_to(np.asarray(self.delta, dtype=int), (n_assoc,))
        above = Y[:, 0] > self.phi_
        if above.sum() < MIN_EXCEEDANCES:
            raise DataError(
                f"only {int(above.sum())} conditioning exceedances; need {MIN_EXCEEDANCES}"
            )

        if self.roughness is None:
            grid = DEFAULT_LAMBDA_GRID if self.lambda_grid is None else tuple(self.lambda_grid)
            self.cv_grid_ = np.asarray(grid, dtype=float)
            self.cv_scores_ = np.column_stack(
                [self._cv_scores(Y, bins, n_bins, j, deltas[j], grid) for j in range(n_assoc)]
            )
            lams = [pick_lambda(grid, self.cv_scores_[:, j]) for j in range(n_assoc)]
        else:
            lams = list(np.broadcast_to(np.asarray(self.roughness, dtype=float), (n_assoc,)))

        x, b = Y[above, 0], bins[above]
        self.fits_ = [
            fit_ht_variate(x, Y[above, j + 1], b, n_bins, lams[j], int(deltas[j]), self.method)
            for j in range(n_assoc)
        ]
        self.n_bins_ = n_bins
        self.roughness_ = np.array(lams, dtype=float)
        self.alpha_ = np.column_stack([f.alpha for f in self.fits_])
        self.beta_ = np.array([f.beta for f in self.fits_])
        self.mu_ = np.array([f.mu for f in self.fits_])
        self.sigma_ = np.array([f.sigma for f in self.fits_])
        self.delta_ = np.array([f.delta for f in self.fits_])
        self.empty_ = np.column_stack([f.empty for f in self.fits_])

        resid = self.residuals(x, Y[above, 1:], b)
        self.residuals_ = [resid[b == k] for k in range(n_bins)]
        self.residual_source_ = [np.flatnonzero(above)[b == k] for k in range(n_bins)]
        self.below_ = Y[~above].copy()
        self.below_bins_ = bins[~above].copy()
        self.n_features_in_ = Y.shape[1]
        return self

    def _cv_scores(self, Y, bins, n_bins, j, delta, grid):
        folds = kfold_split(Y.shape[0], self.n_folds, rng_stream(self.random_state, 1 + j))
        above = Y[:, 0] > self.phi_
        scores = np.zeros(len(grid))
        for f in folds:
            test = np.zeros(Y.shape[0], dtype=bool)
            test[f] = True
            tr = above & ~test
            te = above & test
            if tr.sum() < MIN_EXCEEDANCES or not np.any(te):
                continue
            for i, lam in enumerate(grid):
                fit = fit_ht_variate(Y[tr, 0], Y[tr, j + 1], bins[tr], n_bins, lam, int(delta), self.method)
                scores[i] += ht_nll(Y[te, 0], Y[te, j + 1], bins[te], fit)
        return scores

    # -- residuals and conditional draws ------------------------------------

    def _check(self):
        check_is_fitted(self, "fits_")

    def location_scale(self, x, bins):
        """Conditional mean ``alpha x + mu x**beta`` and scale ``sigma x**beta``."""
        self._check()
        x = np.asarray(x, dtype=float)[:, None]
        xb = x**self.beta_
        mean = self.alpha_[np.asarray(bins, int)] * x + self.mu_ * xb
        return mean, self.sigma_ * xb

    def residuals(self, x, V, bins):
        """Standardized residuals ``(v - alpha x - mu x**beta) / (sigma x**beta)``."""
        x = np.asarray(x, dtype=float)
        V = np.asarray(V, dtype=float).reshape(x.size, -1)
        xb = x[:, None] ** self.beta_
        return (V - self.alpha_[np.asarray(bins, int)] * x[:, None] - self.mu_ * xb) / (self.sigma_ * xb)

    def residual_pool(self, b):
        self._check()
        if self.pool_residuals:
            return np.vstack(self.residuals_)
        return self.residuals_[b]

    def conditional_draw(self, x, bins, rng):
        """Associated values given conditioning values ``x`` (standard margin).

        Above the threshold a residual row is drawn from the bin's residual
        set. At or below it the associated values of the below-threshold
        observation in the same bin with the nearest conditioning value are
        used.
        """
        self._check()
        x = np.asarray(x, dtype=float)
        bins = np.broadcast_to(np.asarray(bins, dtype=int), x.shape)
        out = np.empty((x.size, self.n_features_in_ - 1))
        above = x > self.phi_
        for b in np.unique(bins):
            sel = np.flatnonzero((bins == b) & above)
            if sel.size:
                pool = self.residual_pool(b)
                if pool.shape[0] == 0:
                    raise DataError(f"bin {b} has no residuals; enable pool_residuals")
                e = pool[rng.integers(pool.shape[0], size=sel.size)]
                xs = x[sel][:, None]
                out[sel] = self.alpha_[b] * xs + xs**self.beta_ * (self.mu_ + self.sigma_ * e)
            sel = np.flatnonzero((bins == b) & ~above)
            if sel.size:
                out[sel] = self._nearest_below(x[sel], b)
        return out

    def _nearest_below(self, x, b):
        rows = self.below_[self.below_bins_ == b]
        if rows.shape[0] == 0:
            rows = self.below_
        if rows.shape[0] == 0:
            raise DataError("no below-threshold observations to resample")
        order = np.argsort(rows[:, 0], kind="stable")
        xs = rows[order, 0]
        i = np.clip(np.searchsorted(xs, x), 1, max(xs.size - 1, 1))
        i0 = np.clip(i - 1, 0, xs.size - 1)
        i1 = np.clip(i, 0, xs.size - 1)
        pick = np.where(np.abs(xs[i0] - x) <= np.abs(xs[i1] - x), i0, i1)
        return rows[order[pick], 1:]

    def simulate(self, n, rng, p, subset=None):
        """Joint draws on the standard margin.

        Bins are drawn with probabilities ``p`` rescaled over ``subset``. With
        probability ``1 - tau_dep`` an event is above threshold: the
        conditioning value is drawn from the margin above ``phi`` and the
        associated values from the conditional model. Otherwise a
        below-threshold observation of the bin is resampled whole.

        Returns:
            ``(Y, bins)`` with ``Y`` of shape (n, D).
        """
        self._check()
        p = np.asarray(p, dtype=float)
        subset = np.arange(self.n_bins_) if subset is None else np.atleast_1d(np.asarray(subset, int))
        w = p[subset] / p[subset].sum()
        bins = subset[rng.choice(subset.size, size=n, p=w)]
        _, quantile = _margin(self.margin)
        Y = np.empty((n, self.n_features_in_))
        u = rng.random(n)
        above = u > self.tau_dep
        if np.any(above):
            # u is uniform on (tau_dep, 1) given above
            uu = np.clip(u[above], np.nextafter(self.tau_dep, 1), 1 - CLAMP)
            Y[above, 0] = quantile(uu)
            Y[above, 1:] = self.conditional_draw(Y[above, 0], bins[above], rng)
        below = np.flatnonzero(~above)
        for b in np.unique(bins[below]):
            sel = below[bins[below] == b]
            rows = self.below_[self.below_bins_ == b]
            if rows.shape[0] == 0:
                rows = self.below_
            Y[sel] = rows[rng.integers(rows.shape[0], size=sel.size)]
        return Y, bins

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        self._check()
        return {
            "tau_dep": float(self.tau_dep),
            "phi": self.phi_,
            "margin": self.margin,
            "pool_residuals": bool(self.pool_residuals),
            "method": self.method,
            "associated": [
                {
                    "alpha": [float(a) for a in f.alpha],
                    "alpha_empty": [bool(e) for e in f.empty],
                    "beta": f.beta,
                    "mu": f.mu,
                    "sigma": f.sigma,
                    "delta": f.delta,
                    "lambda": f.lam,
                }
                for f in self.fits_
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, residuals, below, below_bins) -> "HeffernanTawn":
        """Rebuild from :meth:`to_dict` output plus residual and below-threshold data."""
        assoc = d["associated"]
        model = cls(
            tau_dep=d["tau_dep"],
            roughness=[a["lambda"] for a in assoc],
            delta=[a["delta"] for a in assoc],
            method=d.get("method", "newton_raphson"),
            margin=d.get("margin", "laplace"),
            pool_residuals=d.get("pool_residuals", False),
        )
        model.phi_ = d["phi"]
        model.fits_ = [
            HTFit(np.array(a["alpha"]), a["beta"], a["mu"], a["sigma"], a["delta"], a["lambda"],
                  np.array(a.get("alpha_empty", [False] * len(a["alpha"]))), True, np.nan)
            for a in assoc
        ]
        model.n_bins_ = len(assoc[0]["alpha"])
        model.roughness_ = np.array([a["lambda"] for a in assoc])
        model.alpha_ = np.column_stack([f.alpha for f in model.fits_])
        model.beta_ = np.array([f.beta for f in model.fits_])
        model.mu_ = np.array([f.mu for f in model.fits_])
        model.sigma_ = np.array([f.sigma for f in model.fits_])
        model.delta_ = np.array([f.delta for f in model.fits_])
        model.empty_ = np.column_stack([f.empty for f in model.fits_])
        model.residuals_ = [np.asarray(r, dtype=float).reshape(-1, len(assoc)) for r in residuals]
        model.below_ = np.asarray(below, dtype=float).reshape(-1, len(assoc) + 1)
        model.below_bins_ = np.asarray(below_bins, dtype=int)
        model.n_features_in_ = len(assoc) + 1
        return model

    @classmethod
    def from_params(cls, alpha, beta, mu, sigma, delta, tau_dep, residuals, below, below_bins,
                    margin="laplace", pool_residuals=False):
        """Model with given parameters; ``alpha`` has shape (B, D-1)."""
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        d = {
            "tau_dep": tau_dep,
            "phi": float(_margin(margin)[1](tau_dep)),
            "margin": margin,
            "pool_residuals": pool_residuals,
            "associated": [
                {"alpha": list(alpha[:, j]), "beta": float(np.ravel(beta)[j]), "mu": float(np.ravel(mu)[j]),
                 "sigma": float(np.ravel(sigma)[j]), "delta": int(np.ravel(delta)[j]), "lambda": 0.0}
                for j in range(alpha.shape[1])
            ],
        }
        return cls.from_dict(d, residuals, below, below_bins)


def fit_ht_penalized(ls: LaplaceSample, tau_dep, lambda_dep, delta=2, method="newton_raphson",
                     pool_residuals=False) -> HeffernanTawn:
    return HeffernanTawn(tau_dep=tau_dep, roughness=lambda_dep, delta=delta, method=method,
                         margin=ls.margin, pool_residuals=pool_residuals).fit(ls)


def select_lambda_ht(ls: LaplaceSample, tau_dep, grid=DEFAULT_LAMBDA_GRID, k=10, seed=0, delta=2,
                     method="newton_raphson") -> np.ndarray:
    """Cross-validated slope roughness per associated variate."""
    model = HeffernanTawn(tau_dep=tau_dep, roughness=None, lambda_grid=grid, delta=delta,
                          method=method, margin=ls.margin, n_folds=k, random_state=seed).fit(ls)
    return model.roughness_


# ---------------------------------------------------------------------------
# simulation on the physical scale
# ---------------------------------------------------------------------------


def simulate_joint(model: HeffernanTawn, marginals, n, seed, bin_subset=None, p=None):
    """Joint draws on the physical scale.

    Returns:
        ``(values, bins)`` with ``values`` of shape (n, D).
    """
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
    p = marginals[0].p_ if p is None else p
    Y, bins = model.simulate(n, rng, p, bin_subset)
    X = np.column_stack(
        [from_laplace(Y[:, d], bins, m, model.margin) for d, m in enumerate(marginals)]
    )
    return X, bins


@dataclass
class ConditionalReturn:
    """Draws of associated values given a T-year maximum of the conditioning variate."""

    conditioning: np.ndarray
    associated: np.ndarray
    bins: np.ndarray
    below_threshold: float

    def cdf(self, j, y):
        v = np.sort(self.associated[:, j])
        return np.searchsorted(v, np.asarray(y, dtype=float), side="right") / v.size

    def quantile(self, j, q):
        return np.quantile(self.associated[:, j], q)

    def mode(self, j, n_grid=1024) -> float:
        """Most probable associated value from a Gaussian KDE of the draws."""
        v = self.associated[:, j]
        lo, hi = np.quantile(v, [0.001, 0.999])
        grid = np.linspace(lo, hi, n_grid)
        return float(grid[np.argmax(gaussian_kde(v)(grid))])


def attribute_bins(marginal: MarginalModel, y, subset, rng):
    """Bin per value drawn with probability proportional to ``p_b f_b(y)``."""
    subset = np.atleast_1d(np.asarray(subset, int))
    y = np.asarray(y, dtype=float)
    dens = np.column_stack([marginal.p_[b] * marginal.pdf(y, np.full(y.shape, b)) for b in subset])
    tot = dens.sum(axis=1, keepdims=True)
    dens = np.where(tot > 0, dens / np.where(tot > 0, tot, 1.0), 1.0 / subset.size)
    u = rng.random(y.size)[:, None]
    idx = np.minimum((u > np.cumsum(dens, axis=1)).sum(axis=1), subset.size - 1)
    return subset[idx]


def conditional_draws_at(model: HeffernanTawn, marginals, y1, subset, rng):
    """Associated physical values given physical conditioning values ``y1``."""
    y1 = np.asarray(y1, dtype=float)
    bins = attribute_bins(marginals[0], y1, subset, rng)
    _, quantile = _margin(model.margin)
    u = np.clip(marginals[0].cdf(y1, bins), CLAMP, 1 - CLAMP)
    x = quantile(u)
    A = model.conditional_draw(x, bins, rng)
    V = np.column_stack(
        [from_laplace(A[:, j], bins, m, model.margin) for j, m in enumerate(marginals[1:])]
    )
    return V, bins, x


def conditional_return_distribution(
    model: HeffernanTawn,
    marginals,
    T,
    bin_subset=None,
    n_samples=1000,
    seed=0,
    method="density",
) -> ConditionalReturn:
    """Associated values at the T-year maximum of the conditioning variate.

    ``method="density"`` draws the T-year maximum by inverting its CDF,
    attributes each draw to a bin with weight ``p_b f_b(y)`` and applies
    the conditional model. ``method="simulation"`` simulates Poisson
    numbers of storms per T-year period and keeps the largest, as a
    brute-force cross-check.
    """
    if T <= 0:
        raise ValueError("return period must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
    m0 = marginals[0]
    subset, _ = m0._subset(bin_subset)
    if method == "density":
        u = np.clip(rng.random(n_samples), 1e-12, 1 - 1e-12)
        y1 = m0.t_year_max_quantile(u, T, subset)
        V, bins, x = conditional_draws_at(model, marginals, y1, subset, rng)
    elif method == "simulation":
        rate = m0.subset_rate(subset)
        counts = rng.poisson(T * rate, size=n_samples)
        while np.any(counts == 0):
            counts[counts == 0] = rng.poisson(T * rate, size=int((counts == 0).sum()))
        X, bins_all = simulate_joint(model, marginals, int(counts.sum()), rng, subset)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        ends = starts + counts
        pick = np.array([s + int(np.argmax(X[s:e, 0])) for s, e in zip(starts, ends)])
        y1, V, bins = X[pick, 0], X[pick, 1:], bins_all[pick]
        x = _margin(model.margin)[1](np.clip(m0.cdf(y1, bins), CLAMP, 1 - CLAMP))
    else:
        raise ValueError(f"unknown method {method!r}")
    frac = float(np.mean(x <= model.phi_))
    if frac > 0.5:
        warnings.warn(
            "T-year maximum mostly lies below the dependence threshold; "
            "conditional model extrapolation is unreliable",
            RuntimeWarning,
        )
    return ConditionalReturn(y1, V, bins, frac)
