import csv
import json

import numpy as np
import pytest

from covx.core import allocate_bins
from covx.peakpick import SyntheticTruth, simulate_synthetic_sample
from covx.uq import BootstrapConfig, bootstrap_run, fit_margins, original_dependence_fit
from test_peakpick import bundled_truth


@pytest.fixture(scope="module")
def case():
    truth = SyntheticTruth.from_dict(bundled_truth())
    sample = simulate_synthetic_sample(truth, 1200, seed=21)
    return sample, truth.partition


def fast_config(**kw):
    base = dict(n_resamples=4, tau_intervals=[(0.7, 0.9)] * 3, roughness=[1.0, 1.0, 1.0], roughness_dep=1.0,
                marginal_method="newton_raphson")
    base.update(kw)
    return BootstrapConfig(**base)


def test_identity_resample_reproduces_original_fit(case):
    sample, part = case
    cfg = fast_config(n_resamples=1, tau_intervals=[(0.8, 0.8)] * 3, tau_dep_interval=(0.7, 0.7),
                      identity_resample=True)
    ens = bootstrap_run(sample, part, cfg, seed=5)
    alloc = allocate_bins(sample, part)
    orig = fit_margins(sample.values, alloc.a, alloc.n_bins, [0.8] * 3, [1.0] * 3, cfg, alloc.rho,
                       sample.variate_names)
    res = ens.resamples[0]
    assert np.array_equal(res.index, np.arange(sample.n_events))
    for a, b in zip(res.marginals, orig):
        assert a.xi_ == b.xi_
        assert np.array_equal(a.nu_, b.nu_)
        assert np.array_equal(a.psi_, b.psi_)
    ht = original_dependence_fit(sample, alloc, orig, cfg)
    assert np.array_equal(res.ht.alpha_, ht.alpha_)
    assert np.array_equal(res.ht.beta_, ht.beta_)


def test_thresholds_within_intervals_and_bands(case):
    sample, part = case
    cfg = fast_config(n_resamples=6, tau_intervals=[(0.7, 0.9), (0.6, 0.7), (0.75, 0.85)])
    ens = bootstrap_run(sample, part, cfg, seed=2)
    taus = np.array([r.tau for r in ens.resamples])
    assert np.all((taus >= [0.7, 0.6, 0.75]) & (taus <= [0.9, 0.7, 0.85]))
    td = np.array([r.tau_dep for r in ens.resamples])
    assert np.all((td >= 0.6) & (td <= 0.8))
    lo, hi = ens.band(ens.xi(0))
    assert lo <= np.median(ens.xi(0)) <= hi
    assert lo in ens.xi(0) and hi in ens.xi(0)
    assert ens.alpha(0).shape == (6, part.n_bins)


def test_results_independent_of_jobs(case):
    sample, part = case
    a = bootstrap_run(sample, part, fast_config(), seed=9, n_jobs=1)
    b = bootstrap_run(sample, part, fast_config(), seed=9, n_jobs=2)
    for ra, rb in zip(a.resamples, b.resamples):
        assert np.array_equal(ra.index, rb.index)
        assert np.array_equal(ra.tau, rb.tau)
        assert np.array_equal(ra.ht.alpha_, rb.ht.alpha_)
        assert ra.marginals[1].xi_ == rb.marginals[1].xi_


def test_seed_changes_resamples(case):
    sample, part = case
    cfg = fast_config(n_resamples=2, fit_dependence=False)
    a = bootstrap_run(sample, part, cfg, seed=1)
    b = bootstrap_run(sample, part, cfg, seed=2)
    assert not np.array_equal(a.resamples[0].index, b.resamples[0].index)
    assert a.resamples[0].ht is None


def test_save_and_summary(case, tmp_path):
    sample, part = case
    ens = bootstrap_run(sample, part, fast_config(n_resamples=3), seed=4)
    ens.save(tmp_path / "ens")
    index = json.loads((tmp_path / "ens" / "index.json").read_text())
    assert index["n_resamples"] == 3
    body = json.loads((tmp_path / "ens" / index["resamples"][2]["file"]).read_text())
    assert len(body["marginals"]) == 3
    assert body["dependence"]["associated"][0]["lambda"] == 1.0
    ens.write_summary_csv(tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    xi = [r for r in rows if r["parameter"] == "Hs.xi"][0]
    vals = ens.xi(0)
    assert float(xi["q50"]) in vals
    assert float(xi["q025"]) <= float(xi["q50"]) <= float(xi["q975"])
    assert any(r["parameter"] == "WS.alpha" for r in rows)


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(n_resamples=0)
    with pytest.raises(ValueError):
        BootstrapConfig(tau_intervals=[(0.9, 0.7)])
    with pytest.raises(ValueError):
        BootstrapConfig(tau_dep_interval=(0.5, 1.0))
