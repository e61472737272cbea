"""Storm-peak isolation from time series and synthetic samples with known truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import BinPartition, StormPeakSample, build_partition
from .dependence import gg_sample, laplace_cdf, laplace_quantile
from .exceptions import DataError
from .marginal import MarginalModel
from .optim import rng_stream

DEFAULT_LEVEL_QUANTILE = 0.5
DEFAULT_MERGE_GAP = 24.0


@dataclass
class TimeSeries:
    """Regularly sampled multivariate series; channel ``dominant_index`` defines storms."""

    times: np.ndarray
    channels: np.ndarray
    covariate_channels: np.ndarray
    variate_names: list[str]
    covariate_names: list[str]
    covariate_is_periodic: list[bool]
    dominant_index: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        n = self.times.size
        if n == 0:
            raise DataError("empty time series")
        self.channels = np.asarray(self.channels, dtype=float).reshape(n, -1)
        self.covariate_channels = np.asarray(self.covariate_channels, dtype=float).reshape(n, -1)
        if self.channels.shape[1] != len(self.variate_names):
            raise DataError("one name per variate channel is required")
        if self.covariate_channels.shape[1] != len(self.covariate_names):
            raise DataError("one name per covariate channel is required")
        if n > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0):
                raise DataError("times must be strictly increasing")
            med = np.median(dt)
            if np.any(np.abs(dt - med) > 1e-6 * med):
                raise DataError("times are not regularly spaced")

    @property
    def step(self) -> float:
        return float(np.median(np.diff(self.times))) if self.times.size > 1 else 1.0

    @property
    def period_years(self) -> float:
        return self.times.size * self.step / (24.0 * 365.25)


def _runs(mask):
    """Start and end (inclusive) indices of runs of True."""
    d = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1


def isolate_storm_peaks(
    ts: TimeSeries,
    level_quantile: float = DEFAULT_LEVEL_QUANTILE,
    merge_gap: float = DEFAULT_MERGE_GAP,
    period_years: float | None = None,
) -> StormPeakSample:
    """Storm peaks of the dominant channel.

    Time points above the empirical ``level_quantile`` of the dominant
    channel form exceedance intervals. Intervals whose gap (time from the
    end of one to the start of the next) is below ``merge_gap`` hours are
    merged. Each storm contributes its dominant maximum, with the other
    channels and the covariates read at the same instant.

    Args:
        ts: Input series.
        level_quantile: Picking level as a quantile of the dominant channel.
        merge_gap: Merge threshold in hours.
        period_years: Record length; defaults to the series span.
    """
    if not 0.0 < level_quantile < 1.0:
        raise ValueError("level_quantile must lie in (0, 1)")
    if merge_gap <= 0:
        raise ValueError("merge_gap must be positive")
    dom = ts.channels[:, ts.dominant_index]
    level = np.quantile(dom, level_quantile)
    starts, ends = _runs(dom > level)
    if starts.size == 0:
        raise DataError("dominant channel never exceeds the picking level")

    keep = np.concatenate([[True], ts.times[starts[1:]] - ts.times[ends[:-1]] >= merge_gap])
    group = np.cumsum(keep) - 1
    peaks = []
    for g in range(group[-1] + 1):
        s, e = starts[group == g][0], ends[group == g][-1]
        peaks.append(s + int(np.argmax(dom[s : e + 1])))
    peaks = np.array(peaks, dtype=int)

    order = [ts.dominant_index] + [j for j in range(ts.channels.shape[1]) if j != ts.dominant_index]
    return StormPeakSample(
        ts.channels[peaks][:, order],
        ts.covariate_channels[peaks],
        [ts.variate_names[j] for j in order],
        list(ts.covariate_names),
        list(ts.covariate_is_periodic),
        ts.period_years if period_years is None else period_years,
    )


# ---------------------------------------------------------------------------
# synthetic truth
# ---------------------------------------------------------------------------


@dataclass
class SyntheticTruth:
    """Generating model: partition, bin probabilities, marginals and dependence."""

    partition: BinPartition
    p: np.ndarray
    rate: float
    variate_names: list[str]
    marginals: list[MarginalModel]
    tau_dep: float
    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTruth":
        cov = d["covariates"]
        partition = build_partition(cov["edges"], cov["periodic"], cov.get("names"))
        B = partition.n_bins
        p = np.asarray(d.get("p", np.full(B, 1.0 / B)), dtype=float)
        if p.size != B or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise DataError("truth p must be B nonnegative values summing to 1")
        rate = float(d.get("rate", 10.0))
        marginals = []
        for j, m in enumerate(d["marginals"]):
            bc = lambda k: np.broadcast_to(np.asarray(m[k], dtype=float), (B,)).copy()  # noqa: E731
            marginals.append(
                MarginalModel.from_params(bc("omega"), bc("kappa"), bc("l"), float(m["tau"]),
                                          float(m["xi"]), bc("nu"), p, rate, name=d["variate_names"][j])
            )
        D = len(marginals)
        if len(d["variate_names"]) != D:
            raise DataError("one variate name per marginal is required")
        dep = d.get("dependence", {})
        na = D - 1
        alpha = np.broadcast_to(np.asarray(dep.get("alpha", 0.0), dtype=float).reshape(-1, na) if na else
                                np.zeros((B, 0)), (B, na)).copy()
        vec = lambda k, v: np.broadcast_to(np.asarray(dep.get(k, v), dtype=float), (na,)).copy()  # noqa: E731
        truth = cls(partition, p, rate, list(d["variate_names"]), marginals, float(dep.get("tau_dep", 0.7)),
                    alpha, vec("beta", 0.0), vec("mu", 0.0), vec("sigma", 1.0), vec("delta", 2).astype(int))
        if np.any(np.abs(truth.alpha) > 1) or np.any(truth.beta > 1) or np.any(truth.sigma < 0):
            raise DataError("invalid dependence parameters")
        return truth


def simulate_laplace_joint(truth: SyntheticTruth, bins, rng):
    """Standard-margin draws: conditioning Laplace, associated by the HT equation.

    Above the dependence threshold associated values follow
    ``alpha y + y**beta (mu + sigma Z)`` with generalised Gaussian ``Z``.
    Below it they are ``alpha y + sqrt(1 - alpha**2) L`` with ``L`` standard
    Laplace, which keeps the draws continuous in ``alpha``.
    """
    n = bins.size
    y1 = laplace_quantile(np.clip(rng.random(n), 1e-300, 1 - 1e-16))
    na = truth.alpha.shape[1]
    Y = np.empty((n, na + 1))
    Y[:, 0] = y1
    phi = float(laplace_quantile(truth.tau_dep))
    above = y1 > phi
    for j in range(na):
        a = truth.alpha[bins, j]
        z = gg_sample(rng, n, int(truth.delta[j]))
        lap = rng.laplace(0.0, 1.0, n)
        ya = np.where(above, np.maximum(y1, 1e-300), 1.0)
        Y[:, j + 1] = np.where(
            above,
            a * y1 + ya ** truth.beta[j] * (truth.mu[j] + truth.sigma[j] * z),
            a * y1 + np.sqrt(1.0 - a**2) * lap,
        )
    return Y


def simulate_synthetic_sample(truth, n_events: int, seed=0) -> StormPeakSample:
    """Draw ``n_events`` storm peaks from a known generating model.

    Args:
        truth: :class:`SyntheticTruth` or its dictionary form.
        n_events: Number of events.
        seed: Master seed or generator.
    """
    if not isinstance(truth, SyntheticTruth):
        truth = SyntheticTruth.from_dict(truth)
    if n_events < 0:
        raise ValueError("n_events must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
    part = truth.partition
    bins = rng.choice(part.n_bins, size=n_events, p=truth.p)
    cov = part.sample_uniform(bins, rng)
    Y = simulate_laplace_joint(truth, bins, rng)
    u = np.clip(laplace_cdf(Y), 1e-12, 1 - 1e-12)
    X = np.column_stack([m.quantile(u[:, j], bins) for j, m in enumerate(truth.marginals)]) \
        if n_events else np.zeros((0, len(truth.marginals)))
    period = n_events / truth.rate if n_events else 1.0
    return StormPeakSample(X, cov, truth.variate_names, part.covariate_names,
                           part.periodic, period)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def write_peaks_csv(path, sample: StormPeakSample) -> None:
    """One row per event: variates then covariates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample.variate_names + sample.covariate_names)
        for v, c in zip(sample.values, sample.covariates):
            w.writerow([_num(x) for x in v] + [_num(x) for x in c])


def read_peaks_csv(path, n_variates: int, periodic, period_years: float) -> StormPeakSample:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    return StormPeakSample(arr[:, :n_variates], arr[:, n_variates:], header[:n_variates],
                           header[n_variates:], list(periodic), period_years)


def read_timeseries_csv(path, variate_names, covariate_names, periodic) -> TimeSeries:
    """Read columns ``time, <variates...>, <covariates...>`` by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    header = rows[0]
    missing = [c for c in ["time", *variate_names, *covariate_names] if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    try:
        arr = np.array(rows[1:], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    col = {c: i for i, c in enumerate(header)}
    return TimeSeries(
        arr[:, col["time"]],
        arr[:, [col[c] for c in variate_names]],
        arr[:, [col[c] for c in covariate_names]],
        list(variate_names),
        list(covariate_names),
        list(periodic),
    )


def write_timeseries_csv(path, ts: TimeSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *ts.variate_names, *ts.covariate_names])
        for t, v, c in zip(ts.times, ts.channels, ts.covariate_channels):
            w.writerow([_num(t)] + [_num(x) for x in v] + [_num(x) for x in c])
