"""Bootstrap ensembles over marginal and dependence fits with randomized thresholds."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .core import Allocation, BinPartition, StormPeakSample, allocate_bins
from .dependence import HeffernanTawn, to_laplace
from .marginal import DEFAULT_LAMBDA_GRID, MarginalModel
from .optim import rng_stream

SUMMARY_QUANTILES = (0.025, 0.5, 0.975)


@dataclass
class BootstrapConfig:
    """Settings for :func:`bootstrap_run`.

    ``tau_intervals`` holds one ``(lo, hi)`` interval per variate. Setting
    ``roughness`` (or ``roughness_dep``) skips the original-sample
    cross-validation and uses that value for every resample.
    ``identity_resample`` replaces the resampled indices by ``0..N-1``.
    """

    n_resamples: int = 100
    tau_intervals: list = field(default_factory=lambda: [(0.7, 0.9)])
    tau_dep_interval: tuple = (0.6, 0.8)
    reselect_lambda: bool = False
    fit_dependence: bool = True
    roughness: list | None = None
    roughness_dep: list | float | None = None
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    n_folds: int = 10
    location_quantile: float = 0.0
    marginal_method: str = "nelder_mead"
    cv_method: str = "newton_raphson"
    dependence_method: str = "newton_raphson"
    delta: list | int = 2
    margin: str = "laplace"
    pool_residuals: bool = False
    identity_resample: bool = False

    def __post_init__(self):
        if self.n_resamples < 1:
            raise ValueError("need at least one resample")
        ivs = [tuple(map(float, iv)) for iv in self.tau_intervals] + [tuple(map(float, self.tau_dep_interval))]
        for lo, hi in ivs:
            if not 0.0 <= lo <= hi < 1.0:
                raise ValueError(f"threshold interval [{lo}, {hi}] must lie within [0, 1)")


@dataclass
class Resample:
    index: np.ndarray
    tau: np.ndarray
    tau_dep: float
    marginals: list
    ht: HeffernanTawn | None


@dataclass
class BootstrapEnsemble:
    resamples: list
    master_seed: int
    roughness: np.ndarray
    roughness_dep: list | None
    variate_names: list

    @property
    def n_resamples(self) -> int:
        return len(self.resamples)

    def xi(self, d=0) -> np.ndarray:
        return np.array([r.marginals[d].xi_ for r in self.resamples])

    def nu(self, d=0) -> np.ndarray:
        return np.array([r.marginals[d].nu_ for r in self.resamples])

    def alpha(self, j=0) -> np.ndarray:
        return np.array([r.ht.alpha_[:, j] for r in self.resamples])

    def band(self, values, level=0.95):
        a = 0.5 * (1.0 - level)
        return np.quantile(values, [a, 1.0 - a], axis=0, method="inverted_cdf")

    def summary_rows(self):
        """Rows ``(parameter, bin, mean, q025, q50, q975)`` over the ensemble."""
        rows = []

        def add(name, values, bins):
            v = np.asarray(values, dtype=float).reshape(self.n_resamples, -1)
            q = np.quantile(v, SUMMARY_QUANTILES, axis=0, method="inverted_cdf")
            for k in range(v.shape[1]):
                rows.append((name, bins[k], v[:, k].mean(), *q[:, k]))

        for d, name in enumerate(self.variate_names):
            B = self.resamples[0].marginals[d].n_bins_
            add(f"{name}.xi", self.xi(d), [""])
            add(f"{name}.tau", [r.tau[d] for r in self.resamples], [""])
            for key in ("nu", "psi"):
                add(f"{name}.{key}", [getattr(r.marginals[d], key + "_") for r in self.resamples], list(range(B)))
            for key in ("omega", "kappa", "l"):
                add(f"{name}.{key}", [getattr(r.marginals[d].gamma_, key) for r in self.resamples],
                    list(range(B)))
        if self.resamples[0].ht is not None:
            ht0 = self.resamples[0].ht
            add("tau_dep", [r.tau_dep for r in self.resamples], [""])
            for j in range(ht0.alpha_.shape[1]):
                name = self.variate_names[j + 1]
                add(f"{name}.alpha", self.alpha(j), list(range(ht0.n_bins_)))
                for key in ("beta", "mu", "sigma"):
                    add(f"{name}.{key}", [getattr(r.ht, key + "_")[j] for r in self.resamples], [""])
        return rows

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "bin", "mean", "q025", "q50", "q975"])
            for name, b, *vals in self.summary_rows():
                w.writerow([name, b] + [repr(float(v)) for v in vals])

    def save(self, directory) -> None:
        """Per-resample JSON models plus ``index.json``."""
        os.makedirs(directory, exist_ok=True)
        entries = []
        for r, res in enumerate(self.resamples):
            name = f"resample_{r:04d}.json"
            body = {
                "resample": r,
                "tau": [float(t) for t in res.tau],
                "tau_dep": float(res.tau_dep),
                "index": [int(i) for i in res.index],
                "marginals": [m.to_dict() for m in res.marginals],
                "dependence": None if res.ht is None else res.ht.to_dict(),
            }
            with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
                json.dump(body, fh, indent=1, sort_keys=True)
                fh.write("\n")
            entries.append({"resample": r, "file": name})
        index = {
            "master_seed": int(self.master_seed),
            "n_resamples": self.n_resamples,
            "roughness": [float(v) for v in self.roughness],
            "roughness_dep": None if self.roughness_dep is None else [float(v) for v in self.roughness_dep],
            "variates": list(self.variate_names),
            "resamples": entries,
        }
        with open(os.path.join(directory, "index.json"), "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _midpoint(iv):
    return 0.5 * (float(iv[0]) + float(iv[1]))


def fit_margins(values, bins, n_bins, taus, roughness, cfg: BootstrapConfig, rate, names, seed=0):
    """One marginal model per column; ``roughness[d] = None`` runs CV."""
    out = []
    for d in range(values.shape[1]):
        lam = roughness[d]
        m = MarginalModel(
            tau=float(taus[d]),
            roughness=lam,
            lambda_grid=cfg.lambda_grid,
            n_folds=cfg.n_folds,
            location_quantile=cfg.location_quantile,
            method=cfg.cv_method if lam is None else cfg.marginal_method,
            random_state=seed,
            name=names[d],
        ).fit(values[:, d], bins, n_bins, rate)
        if lam is None and cfg.cv_method != cfg.marginal_method:
            # refit the selected roughness with the production minimizer
            cv = m
            m = MarginalModel(tau=float(taus[d]), roughness=cv.roughness_, location_quantile=cfg.location_quantile,
                              method=cfg.marginal_method, name=names[d]).fit(values[:, d], bins, n_bins, rate)
            m.cv_grid_, m.cv_scores_ = cv.cv_grid_, cv.cv_scores_
        out.append(m)
    return out


def fit_dependence(values, bins, n_bins, marginals, tau_dep, roughness_dep, cfg: BootstrapConfig, seed=0):
    ls = to_laplace(values, bins, marginals, n_bins, cfg.margin)
    return HeffernanTawn(
        tau_dep=tau_dep,
        roughness=roughness_dep,
        lambda_grid=cfg.lambda_grid,
        delta=cfg.delta,
        method=cfg.dependence_method,
        margin=cfg.margin,
        pool_residuals=cfg.pool_residuals,
        n_folds=cfg.n_folds,
        random_state=seed,
    ).fit(ls)


def original_fit(sample: StormPeakSample, alloc: Allocation, cfg: BootstrapConfig, seed=0):
    """Marginal models of the original sample at the threshold interval midpoints.

    Roughness comes from ``cfg.roughness`` or, if unset, cross-validation.
    """
    D = sample.n_variates
    if len(cfg.tau_intervals) != D:
        raise ValueError("need one threshold interval per variate")
    if cfg.roughness is None:
        lams = [None] * D
    else:
        lams = [float(v) for v in np.broadcast_to(np.asarray(cfg.roughness, float), (D,))]
    taus = [_midpoint(iv) for iv in cfg.tau_intervals]
    return fit_margins(sample.values, alloc.a, alloc.n_bins, taus, lams, cfg, alloc.rho,
                       sample.variate_names, seed)


def original_dependence_fit(sample: StormPeakSample, alloc: Allocation, marginals, cfg: BootstrapConfig, seed=0):
    return fit_dependence(sample.values, alloc.a, alloc.n_bins, marginals, _midpoint(cfg.tau_dep_interval),
                          cfg.roughness_dep, cfg, seed)


def _marginal_resample(r, sample, alloc, cfg: BootstrapConfig, lams, seed):
    rng = rng_stream(seed, r)
    N = sample.n_events
    idx = np.arange(N) if cfg.identity_resample else rng.integers(0, N, size=N)
    taus = np.array([rng.uniform(lo, hi) for lo, hi in cfg.tau_intervals])
    sub_seed = int(rng.integers(2**31))
    roughness = [None] * len(lams) if cfg.reselect_lambda else lams
    margs = fit_margins(sample.values[idx], alloc.a[idx], alloc.n_bins, taus, roughness, cfg, alloc.rho,
                        sample.variate_names, sub_seed)
    return Resample(idx, taus, float("nan"), margs, None)


def _dependence_resample(r, res: Resample, sample, alloc, cfg: BootstrapConfig, lam_dep, seed):
    rng = rng_stream(seed, (r, 1))
    tau_dep = float(rng.uniform(*cfg.tau_dep_interval))
    sub_seed = int(rng.integers(2**31))
    idx = res.index
    ht = fit_dependence(sample.values[idx], alloc.a[idx], alloc.n_bins, res.marginals, tau_dep,
                        None if cfg.reselect_lambda else lam_dep, cfg, sub_seed)
    return Resample(idx, res.tau, tau_dep, res.marginals, ht)


def _run(tasks, n_jobs):
    if n_jobs == 1:
        return [f(*a, **k) for f, a, k in tasks]
    return Parallel(n_jobs=n_jobs)(tasks)


def bootstrap_marginal(sample, alloc, cfg: BootstrapConfig, roughness, seed=0, n_jobs=1) -> BootstrapEnsemble:
    """Marginal refits on ``R`` resamples; resample ``r`` uses ``rng_stream(seed, r)``."""
    tasks = (delayed(_marginal_resample)(r, sample, alloc, cfg, list(roughness), seed)
             for r in range(cfg.n_resamples))
    return BootstrapEnsemble(_run(tasks, n_jobs), int(seed), np.array(roughness, dtype=float), None,
                             list(sample.variate_names))


def bootstrap_dependence(ens: BootstrapEnsemble, sample, alloc, cfg: BootstrapConfig, roughness_dep, seed=0,
                         n_jobs=1) -> BootstrapEnsemble:
    """Dependence refits on the resamples of a marginal ensemble.

    Each resample reuses its indices and marginal models and draws its
    dependence threshold from ``rng_stream(seed, (r, 1))``.
    """
    lam = None if roughness_dep is None else [float(v) for v in np.ravel(roughness_dep)]
    tasks = (delayed(_dependence_resample)(r, res, sample, alloc, cfg, lam, seed)
             for r, res in enumerate(ens.resamples))
    return BootstrapEnsemble(_run(tasks, n_jobs), ens.master_seed, ens.roughness, lam, ens.variate_names)


def bootstrap_run(
    sample: StormPeakSample,
    partition: BinPartition,
    config: BootstrapConfig,
    seed: int = 0,
    n_jobs: int = 1,
) -> BootstrapEnsemble:
    """Refit marginal and dependence models on ``R`` resamples of whole events.

    Roughness coefficients are taken from the original-sample fit at the
    threshold interval midpoints unless ``reselect_lambda`` is set. All
    random draws of resample ``r`` come from streams keyed by ``(seed, r)``,
    so the ensemble does not depend on ``n_jobs``.
    """
    alloc = allocate_bins(sample, partition)
    margs = original_fit(sample, alloc, config, seed)
    lams = [m.roughness_ for m in margs]
    ens = bootstrap_marginal(sample, alloc, config, lams, seed, n_jobs)
    if not (config.fit_dependence and sample.n_variates > 1):
        return ens
    ht = original_dependence_fit(sample, alloc, margs, config, seed)
    return bootstrap_dependence(ens, sample, alloc, config, ht.roughness_, seed, n_jobs)
