"""Five-stage pipeline driver.

Every stage reads the artifacts of earlier stages from the working
directory, writes its own artifacts and a ``stageK_summary.json`` holding
the config hash, the seed and the artifact list. Outputs depend only on the
config and the seed, never on ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import warnings
from importlib import resources

import numpy as np

from .config import load_config
from .contours import all_contours, is_convex, lock_point, write_contours_csv
from .core import BinPartition, allocate_bins, build_partition
from .dependence import HeffernanTawn, conditional_return_distribution, simulate_joint
from .exceptions import ConfigError, CovxError, DataError
from .marginal import MarginalModel
from .optim import rng_stream
from .peakpick import (
    SyntheticTruth,
    isolate_storm_peaks,
    read_peaks_csv,
    read_timeseries_csv,
    simulate_synthetic_sample,
    write_peaks_csv,
)
from .svg import Plot
from .uq import (
    BootstrapConfig,
    BootstrapEnsemble,
    Resample,
    bootstrap_dependence,
    bootstrap_marginal,
    original_dependence_fit,
    original_fit,
)

PACKAGE_PREFIX = "package:"


def _num(x) -> str:
    return repr(float(x))


class Workspace:
    """Working directory plus the resolved configuration of one invocation."""

    def __init__(self, cfg, cfg_hash, cfg_dir, workdir, seed=None, jobs=1):
        self.cfg = cfg
        self.hash = cfg_hash
        self.cfg_dir = cfg_dir
        self.dir = os.path.abspath(workdir)
        self.seed = int(cfg["seed"] if seed is None else seed)
        self.jobs = int(jobs)
        self.written = []
        os.makedirs(self.dir, exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.dir, *parts)

    def resolve(self, name):
        if name.startswith(PACKAGE_PREFIX):
            return str(resources.files("covx.data") / name[len(PACKAGE_PREFIX):])
        return name if os.path.isabs(name) else os.path.join(self.cfg_dir, name)

    def _record(self, name):
        self.written.append(name)

    def write_json(self, name, obj):
        os.makedirs(os.path.dirname(self.path(name)) or self.dir, exist_ok=True)
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        self._record(name)

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
        self._record(name)

    def write_svg(self, name, plot: Plot):
        plot.save(self.path(name))
        self._record(name)

    def read_json(self, name):
        try:
            with open(self.path(name), encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise DataError(f"missing artifact {name}; run the earlier stages first") from None

    def check_upstream(self, stage):
        stale = []
        for k in range(1, stage):
            p = self.path(f"stage{k}_summary.json")
            if not os.path.exists(p):
                raise DataError(f"stage {k} has not been run in {self.dir}")
            with open(p, encoding="utf-8") as fh:
                if json.load(fh).get("config_hash") != self.hash:
                    stale.append(k)
        if stale:
            warnings.warn(f"artifacts of stage(s) {stale} were produced with a different config", UserWarning)
        return stale

    def summary(self, stage, extra=None, stale=()):
        body = {
            "stage": stage,
            "config_hash": self.hash,
            "seed": self.seed,
            "artifacts": sorted(self.written),
            "stale_upstream": list(stale),
        }
        body.update(extra or {})
        self.written = []
        self.write_json(f"stage{stage}_summary.json", body)
        self.written = []


# ---------------------------------------------------------------------------
# loading of earlier artifacts
# ---------------------------------------------------------------------------


def _load_sample(ws: Workspace):
    meta = ws.read_json("peaks_meta.json")
    if not os.path.exists(ws.path("peaks.csv")):
        raise DataError("missing artifact peaks.csv")
    return read_peaks_csv(ws.path("peaks.csv"), len(meta["variate_names"]), meta["covariate_is_periodic"],
                          meta["period_years"])


def _load_partition(ws: Workspace) -> BinPartition:
    return BinPartition.from_dict(ws.read_json("partition.json"))


def _load_marginals(ws: Workspace, names):
    return [MarginalModel.from_dict(ws.read_json(f"marginal_{n}.json")) for n in names]


def _variate_order(ws: Workspace):
    names = list(ws.cfg["variates"])
    cond = ws.cfg["stage4"]["conditioning"] or names[0]
    order = [names.index(cond)] + [i for i, n in enumerate(names) if n != cond]
    return order, [names[i] for i in order]


def _read_matrix(path, n_cols):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array(rows, dtype=float).reshape(len(rows), n_cols)


def _load_ht(ws: Workspace):
    d = ws.read_json("ht.json")
    na = len(d["model"]["associated"])
    B = len(d["model"]["associated"][0]["alpha"])
    residuals = [_read_matrix(ws.path(f"residuals_bin{b}.csv"), na + 1)[:, 1:] for b in range(B)]
    below = _read_matrix(ws.path("below.csv"), na + 2)
    return HeffernanTawn.from_dict(d["model"], residuals, below[:, 1:], below[:, 0].astype(int)), d


def _bootstrap_config(cfg, D):
    s3, s4 = cfg["stage3"], cfg["stage4"]
    kw = {}
    if s3["lambda_grid"] is not None:
        kw["lambda_grid"] = tuple(s3["lambda_grid"])
    return BootstrapConfig(
        n_resamples=s3["n_resamples"],
        tau_intervals=[tuple(iv) for iv in s3["tau_intervals"]],
        tau_dep_interval=tuple(s4["tau_dep_interval"]),
        reselect_lambda=s3["reselect_lambda"],
        fit_dependence=D > 1,
        roughness=s3["roughness"],
        roughness_dep=s4["roughness"],
        n_folds=s3["n_folds"],
        location_quantile=s3["location_quantile"],
        marginal_method=s3["method"],
        cv_method=s3["cv_method"],
        dependence_method=s4["method"],
        delta=s4["delta"],
        margin=s4["margin"],
        pool_residuals=s4["pool_residuals"],
        **kw,
    )


def _subsets(ws: Workspace, n_bins):
    out = []
    for s in ws.cfg["stage5"]["subsets"]:
        if s == "omni":
            out.append(("omni", None))
        elif s == "each":
            out.extend((f"bin{b}", [b]) for b in range(n_bins))
        else:
            if max(s) >= n_bins:
                raise ConfigError(f"bin index {max(s)} out of range", "/stage5/subsets")
            out.append(("bins" + "-".join(str(b) for b in s), list(s)))
    return out


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage1(ws: Workspace):
    cfg, s1 = ws.cfg, ws.cfg["stage1"]
    names = cfg["variates"]
    cov_names = [c["name"] for c in cfg["covariates"]]
    periodic = [c["periodic"] for c in cfg["covariates"]]
    if "simulate" in s1:
        truth = s1["simulate"]["truth"]
        if isinstance(truth, str):
            with open(ws.resolve(truth), encoding="utf-8") as fh:
                truth = json.load(fh)
        truth = SyntheticTruth.from_dict(truth)
        if truth.variate_names != names or truth.partition.covariate_names != cov_names:
            raise ConfigError("truth variate or covariate names differ from the config", "/stage1/simulate/truth")
        sample = simulate_synthetic_sample(truth, s1["simulate"]["n"], rng_stream(ws.seed, 1))
        source = "simulate"
    elif "timeseries" in s1:
        ts = read_timeseries_csv(ws.resolve(s1["timeseries"]), names, cov_names, periodic)
        sample = isolate_storm_peaks(ts, s1["level_quantile"], s1["merge_gap"], s1.get("period_years"))
        source = "timeseries"
    else:
        if "period_years" not in s1:
            raise ConfigError("period_years is required with a peaks file", "/stage1/period_years")
        sample = read_peaks_csv(ws.resolve(s1["peaks"]), len(names), periodic, s1["period_years"])
        source = "peaks"
    if sample.n_events == 0:
        raise DataError("no storm peaks")
    write_peaks_csv(ws.path("peaks.csv"), sample)
    ws._record("peaks.csv")
    ws.write_json("peaks_meta.json", {
        "variate_names": sample.variate_names,
        "covariate_names": sample.covariate_names,
        "covariate_is_periodic": sample.covariate_is_periodic,
        "period_years": sample.period_years,
        "n_events": sample.n_events,
        "source": source,
    })
    for j, name in enumerate(sample.variate_names):
        p = Plot(f"Storm peaks: {name}", "event", name)
        ws.write_svg(f"peaks_{name}.svg", p.scatter(np.arange(sample.n_events), sample.values[:, j], "#1f77b4"))
    ws.summary(1, {"n_events": sample.n_events, "period_years": sample.period_years})


def stage2(ws: Workspace):
    stale = ws.check_upstream(2)
    sample = _load_sample(ws)
    cfg = ws.cfg
    part = build_partition(cfg["stage2"]["edges"], [c["periodic"] for c in cfg["covariates"]],
                           [c["name"] for c in cfg["covariates"]])
    alloc = allocate_bins(sample, part)
    body = part.to_dict()
    body.update({"occupancy": [int(v) for v in alloc.occupancy], "p": [float(v) for v in alloc.p],
                 "rho": float(alloc.rho)})
    ws.write_json("partition.json", body)
    labels = part.labels
    ws.write_csv("allocation.csv", ["event", "bin", "label"],
                 [(i, int(b), labels[b]) for i, b in enumerate(alloc.a)])
    ws.write_csv("bins.csv", ["bin", "label", "occupancy", "p"],
                 [(b, labels[b], int(alloc.occupancy[b]), float(alloc.p[b])) for b in range(part.n_bins)])
    ws.write_csv("covariate_scatter.csv", ["event", *sample.covariate_names, *sample.variate_names, "bin"],
                 [(i, *map(float, c), *map(float, v), int(b))
                  for i, (c, v, b) in enumerate(zip(sample.covariates, sample.values, alloc.a))])
    for j, cname in enumerate(sample.covariate_names):
        for d, vname in enumerate(sample.variate_names):
            p = Plot(f"{vname} against {cname}", cname, vname).scatter(sample.covariates[:, j], sample.values[:, d],
                                                                     "#1f77b4")
            ws.write_svg(f"scatter_{vname}_{cname}.svg", p)
    if alloc.empty_bins.size:
        warnings.warn(f"empty bins: {alloc.empty_bins.tolist()}", UserWarning)
    ws.summary(2, {"n_bins": part.n_bins, "empty_bins": alloc.empty_bins.tolist()}, stale)


def _tyear_rows(model: MarginalModel, ens_models, T, label, subset):
    lo, hi = model.t_year_max_quantile([1e-3, 1 - 1e-3], T, subset)
    grid = np.linspace(lo, hi, 200)
    F = model.t_year_max_cdf(grid, T, subset)
    Fe = np.array([m.t_year_max_cdf(grid, T, subset) for m in ens_models])
    q = np.quantile(Fe, [0.025, 0.5, 0.975], axis=0, method="inverted_cdf")
    return [(label, float(T), float(y), float(f), *map(float, q[:, i])) for i, (y, f) in enumerate(zip(grid, F))]


def stage3(ws: Workspace):
    stale = ws.check_upstream(3)
    sample = _load_sample(ws)
    part = _load_partition(ws)
    alloc = allocate_bins(sample, part)
    bcfg = _bootstrap_config(ws.cfg, sample.n_variates)
    margs = original_fit(sample, alloc, bcfg, ws.seed)
    lams = [m.roughness_ for m in margs]
    ens = bootstrap_marginal(sample, alloc, bcfg, lams, ws.seed, ws.jobs)
    if os.path.isdir(ws.path("ensemble")):
        shutil.rmtree(ws.path("ensemble"))
    ens.save(ws.path("ensemble"))
    ws.written.append("ensemble/index.json")
    ws.written.extend(f"ensemble/resample_{r:04d}.json" for r in range(ens.n_resamples))
    ens.write_summary_csv(ws.path("ensemble_summary.csv"))
    ws._record("ensemble_summary.csv")

    labels = part.labels
    subsets = [("omni", None)] + [(f"bin{b}", [b]) for b in range(part.n_bins) if alloc.p[b] > 0]
    rv_summary = {}
    for d, (m, name) in enumerate(zip(margs, sample.variate_names)):
        body = m.to_dict()
        if hasattr(m, "cv_scores_"):
            body["cv"] = {"lambda": [float(v) for v in m.cv_grid_], "score": [float(v) for v in m.cv_scores_]}
        ws.write_json(f"marginal_{name}.json", body)
        if hasattr(m, "cv_scores_"):
            ws.write_csv(f"cv_{name}.csv", ["lambda", "score"], zip(map(float, m.cv_grid_), map(float, m.cv_scores_)))
            ws.write_svg(f"cv_{name}.svg", Plot(f"CV score: {name}", "lambda", "score", logx=True)
                         .line(m.cv_grid_, m.cv_scores_).marker(m.roughness_, m.cv_scores_[
                             int(np.argmin(np.abs(m.cv_grid_ - m.roughness_)))]))
        taus = np.array([r.tau[d] for r in ens.resamples])
        xis = ens.xi(d)
        ws.write_csv(f"xi_tau_{name}.csv", ["resample", "tau", "xi"],
                     [(r, float(t), float(x)) for r, (t, x) in enumerate(zip(taus, xis))])
        ws.write_svg(f"xi_tau_{name}.svg", Plot(f"Shape against threshold: {name}", "tau", "xi")
                     .scatter(taus, xis, "#1f77b4"))
        nu = ens.nu(d)
        psi = np.array([r.marginals[d].psi_ for r in ens.resamples])
        qnu = np.quantile(nu, [0.025, 0.5, 0.975], axis=0, method="inverted_cdf")
        qpsi = np.quantile(psi, [0.025, 0.5, 0.975], axis=0, method="inverted_cdf")
        ws.write_csv(f"params_{name}.csv",
                     ["bin", "label", "nu_q025", "nu_q50", "nu_q975", "psi_q025", "psi_q50", "psi_q975"],
                     [(b, labels[b], *map(float, qnu[:, b]), *map(float, qpsi[:, b])) for b in range(part.n_bins)])
        bidx = np.arange(part.n_bins)
        ws.write_svg(f"params_{name}.svg", Plot(f"GP scale by bin: {name}", "bin", "nu")
                     .line(bidx, qnu[0], "#999999", "2.5%").line(bidx, qnu[1], "#1f77b4", "median")
                     .line(bidx, qnu[2], "#999999", "97.5%"))
        rows, rv_rows = [], []
        ens_models = [r.marginals[d] for r in ens.resamples]
        for T in ws.cfg["stage3"]["return_periods"]:
            for label, subset in subsets:
                rows.extend(_tyear_rows(m, ens_models, T, label, subset))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    point = m.return_value(T, subset=subset)
                    rvs = np.array([e.return_value(T, subset=subset) for e in ens_models])
                q = np.quantile(rvs, [0.025, 0.5, 0.975], method="inverted_cdf")
                rv_rows.append((label, float(T), float(point), float(rvs.mean()), *map(float, q)))
        ws.write_csv(f"tyear_cdf_{name}.csv", ["subset", "T", "y", "F", "F_q025", "F_q50", "F_q975"], rows)
        ws.write_csv(f"return_values_{name}.csv", ["subset", "T", "point", "mean", "q025", "q50", "q975"], rv_rows)
        rv_summary[name] = {r[0]: r[2] for r in rv_rows if r[1] == ws.cfg["stage3"]["return_periods"][0]}
        T0 = ws.cfg["stage3"]["return_periods"][0]
        omni = [r for r in rows if r[0] == "omni" and r[1] == T0]
        ys = np.array([r[2] for r in omni])
        ws.write_svg(f"tyear_cdf_{name}.svg", Plot(f"{T0:g}-year maximum: {name}", name, "CDF")
                     .line(ys, [r[4] for r in omni], "#999999", "2.5%").line(ys, [r[3] for r in omni], "#1f77b4", "point")
                     .line(ys, [r[6] for r in omni], "#999999", "97.5%")
                     .line(ys, np.full(ys.size, np.exp(-1.0)), "#d62728", "exp(-1)"))
    ws.summary(3, {"roughness": {n: float(v) for n, v in zip(sample.variate_names, lams)},
                   "tau_intervals": ws.cfg["stage3"]["tau_intervals"],
                   "taus_within_interval": bool(all(
                       lo <= r.tau[d] <= hi for r in ens.resamples
                       for d, (lo, hi) in enumerate(ws.cfg["stage3"]["tau_intervals"]))),
                   "return_values": rv_summary}, stale)


def _load_ensemble(ws: Workspace, order):
    index = ws.read_json("ensemble/index.json")
    out = []
    for e in index["resamples"]:
        d = ws.read_json(os.path.join("ensemble", e["file"]))
        margs = [MarginalModel.from_dict(d["marginals"][i]) for i in order]
        out.append(Resample(np.array(d["index"], dtype=int), np.array(d["tau"])[order], float("nan"), margs, None))
    return BootstrapEnsemble(out, index["master_seed"], np.array(index["roughness"])[order], None,
                             [index["variates"][i] for i in order])


def stage4(ws: Workspace):
    stale = ws.check_upstream(4)
    sample = _load_sample(ws)
    if sample.n_variates < 2:
        ws.summary(4, {"skipped": "single variate"}, stale)
        return
    order, names = _variate_order(ws)
    sample = sample.__class__(sample.values[:, order], sample.covariates, names, sample.covariate_names,
                              sample.covariate_is_periodic, sample.period_years)
    part = _load_partition(ws)
    alloc = allocate_bins(sample, part)
    bcfg = _bootstrap_config(ws.cfg, sample.n_variates)
    if ws.cfg["stage4"]["lambda_grid"] is not None:
        bcfg.lambda_grid = tuple(ws.cfg["stage4"]["lambda_grid"])
    margs = _load_marginals(ws, names)
    ht = original_dependence_fit(sample, alloc, margs, bcfg, ws.seed)
    ens = bootstrap_dependence(_load_ensemble(ws, order), sample, alloc, bcfg, ht.roughness_, ws.seed, ws.jobs)

    body = {"variates": names, "model": ht.to_dict()}
    if hasattr(ht, "cv_scores_"):
        body["cv"] = {"lambda": [float(v) for v in ht.cv_grid_],
                      "score": [[float(v) for v in row] for row in ht.cv_scores_]}
        ws.write_csv("cv_ht.csv", ["lambda", *names[1:]],
                     [(float(lam), *map(float, row)) for lam, row in zip(ht.cv_grid_, ht.cv_scores_)])
    ws.write_json("ht.json", body)
    for b in range(part.n_bins):
        ws.write_csv(f"residuals_bin{b}.csv", ["event", *[f"e_{n}" for n in names[1:]]],
                     [(int(i), *map(float, e)) for i, e in zip(ht.residual_source_[b], ht.residuals_[b])])
    ws.write_csv("below.csv", ["bin", *names], [(int(b), *map(float, y)) for b, y in zip(ht.below_bins_, ht.below_)])

    if os.path.isdir(ws.path("ensemble_dependence")):
        shutil.rmtree(ws.path("ensemble_dependence"))
    os.makedirs(ws.path("ensemble_dependence"))
    for r, res in enumerate(ens.resamples):
        ws.write_json(f"ensemble_dependence/resample_{r:04d}.json",
                      {"resample": r, "tau_dep": res.tau_dep, "dependence": res.ht.to_dict()})
    for j, name in enumerate(names[1:]):
        alpha = ens.alpha(j)
        taus = np.array([r.tau_dep for r in ens.resamples])
        ws.write_csv(f"alpha_tau_{name}.csv", ["resample", "tau_dep", "bin", "alpha"],
                     [(r, float(taus[r]), b, float(alpha[r, b])) for r in range(ens.n_resamples)
                      for b in range(part.n_bins)])
        p = Plot(f"Slope against dependence threshold: {name}", "tau_dep", "alpha")
        for b in range(part.n_bins):
            p.scatter(taus, alpha[:, b], ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"][b % 6])
        ws.write_svg(f"alpha_tau_{name}.svg", p)

    T = ws.cfg["stage4"]["return_period"]
    n_cond = ws.cfg["stage4"]["n_conditional"]
    qs = np.linspace(0.005, 0.995, 199)
    rows, modes = [], {}
    subsets = [("omni", None)] + [(f"bin{b}", [b]) for b in range(part.n_bins) if alloc.p[b] > 0]
    for s, (label, subset) in enumerate(subsets):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cr = conditional_return_distribution(ht, margs, T, subset, n_cond, rng_stream(ws.seed, (4, s)))
        rows.extend((label, names[0], float(q), float(v)) for q, v in zip(qs, np.quantile(cr.conditioning, qs)))
        for j, name in enumerate(names[1:]):
            rows.extend((label, name, float(q), float(v)) for q, v in zip(qs, cr.quantile(j, qs)))
            if label == "omni":
                modes[name] = {"conditional_mode": cr.mode(j),
                               "marginal_mode": margs[j + 1].t_year_max_mode(T)}
                ws.write_svg(f"conditional_{name}.svg",
                             Plot(f"{name} given the {T:g}-year maximum of {names[0]}", name, "CDF")
                             .line(cr.quantile(j, qs), qs, "#1f77b4", "conditional"))
    ws.write_csv("conditional_return.csv", ["subset", "variate", "probability", "value"], rows)
    ws.summary(4, {"roughness": [float(v) for v in ht.roughness_], "conditioning": names[0],
                   "tau_dep_interval": ws.cfg["stage4"]["tau_dep_interval"], "modes": modes}, stale)


def stage5(ws: Workspace):
    stale = ws.check_upstream(5)
    meta = ws.read_json("peaks_meta.json")
    if len(meta["variate_names"]) < 2:
        raise DataError("contours need at least two variates")
    _, names = _variate_order(ws)
    margs = _load_marginals(ws, names)
    ht, _ = _load_ht(ws)
    s5 = ws.cfg["stage5"]
    T = s5["return_period"]
    locks = []
    skipped = []
    for s, (label, subset) in enumerate(_subsets(ws, ht.n_bins_)):
        if subset is not None and margs[0].p_[subset].sum() <= 0:
            skipped.append(label)
            continue
        X, _ = simulate_joint(ht, margs, s5["n_simulate"], rng_stream(ws.seed, (5, s)), subset)
        for j, name in enumerate(names[1:]):
            lock = lock_point(T, margs, ht, subset, s5["n_lock"], rng_stream(ws.seed, (5, s, j + 1)), j)
            pair = X[:, [0, j + 1]]
            sets = all_contours(pair, lock, s5["n_angles"], s5["grid"], subset)
            tag = f"{label}_{name}"
            write_contours_csv(ws.path(f"contours_{tag}.csv"), sets)
            ws._record(f"contours_{tag}.csv")
            plot = Plot(f"{T:g}-year contours, {label}", names[0], name).scatter(pair[:, 0], pair[:, 1])
            colours = {"exceedance": "#1f77b4", "direct_sampling": "#d62728", "ht_density": "#2ca02c"}
            for c in sets:
                for k, line in enumerate(c.polylines):
                    plot.line(line[:, 0], line[:, 1], colours[c.method], c.method if k == 0 else None)
            plot.marker(lock.x1, lock.x2, "#000000", "lock point")
            ws.write_svg(f"contours_{tag}.svg", plot)
            span = np.ptp(pair, axis=0)
            locks.append({
                "subset": label,
                "variate": name,
                "x1": lock.x1,
                "x2": lock.x2,
                "T": T,
                "levels": {c.method: c.level for c in sets},
                "lock_distance": {c.method: c.distance_to(lock.xy) / float(np.hypot(*span)) for c in sets},
                "direct_sampling_convex": is_convex(sets[1].polylines[0]),
            })
    ws.write_json("lock_points.json", locks)
    ws.summary(5, {"skipped_subsets": skipped, "n_contour_sets": len(locks)}, stale)


STAGES = {1: stage1, 2: stage2, 3: stage3, 4: stage4, 5: stage5}


def run_stage(stage, config_path, workdir, seed=None, jobs=1):
    cfg, h, cfg_dir = load_config(config_path)
    STAGES[stage](Workspace(cfg, h, cfg_dir, workdir, seed, jobs))


def run_all(config_path, workdir, seed=None, jobs=1):
    cfg, h, cfg_dir = load_config(config_path)
    for k in sorted(STAGES):
        STAGES[k](Workspace(cfg, h, cfg_dir, workdir, seed, jobs))


def simulate_command(truth_path, n, seed, out):
    with open(truth_path, encoding="utf-8") as fh:
        truth = SyntheticTruth.from_dict(json.load(fh))
    sample = simulate_synthetic_sample(truth, n, rng_stream(seed, 1))
    write_peaks_csv(out, sample)
    print(json.dumps({"peaks": out, "n_events": sample.n_events, "period_years": sample.period_years}))


def init_command(directory):
    os.makedirs(directory, exist_ok=True)
    for name in ("example_config.json", "synthetic_truth.json"):
        src = resources.files("covx.data") / name
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.write(src.read_text(encoding="utf-8"))
    print(os.path.join(directory, "example_config.json"))


def build_parser():
    parser = argparse.ArgumentParser(prog="covx", description="Covariate extreme value pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for k in sorted(STAGES):
        p = sub.add_parser(f"stage{k}", help=f"run stage {k}")
        p.add_argument("--config", required=True)
        p.add_argument("--workdir", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("run-all", help="run stages 1 to 5")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("simulate", help="draw a storm-peak sample from a truth file")
    p.add_argument("--truth", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="peaks.csv")
    p = sub.add_parser("init", help="copy the bundled example config and truth")
    p.add_argument("directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run-all":
            run_all(args.config, args.workdir, args.seed, args.jobs)
        elif args.command.startswith("stage"):
            run_stage(int(args.command[5:]), args.config, args.workdir, args.seed, args.jobs)
        elif args.command == "simulate":
            if args.n < 0:
                raise ConfigError("n must be nonnegative", "/n")
            simulate_command(args.truth, args.n, args.seed, args.out)
        elif args.command == "init":
            init_command(args.directory)
    except CovxError as exc:
        print(f"covx: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"covx: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
