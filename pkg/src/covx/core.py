"""Storm-peak sample container, covariate bins and event-to-bin allocation."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError

PERIOD = 360.0


@dataclass
class StormPeakSample:
    """N storm-peak events with D variates and C covariates.

    ``values[:, 0]`` is the dominant (storm-peak) variate; the remaining
    columns hold associated values read at the storm peak.
    """

    values: np.ndarray
    covariates: np.ndarray
    variate_names: list[str]
    covariate_names: list[str]
    covariate_is_periodic: list[bool]
    period_years: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.variate_names))
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(
            -1, len(self.covariate_names)
        )
        self.variate_names = [str(v) for v in self.variate_names]
        self.covariate_names = [str(c) for c in self.covariate_names]
        self.covariate_is_periodic = [bool(p) for p in self.covariate_is_periodic]
        if len(self.covariate_is_periodic) != len(self.covariate_names):
            raise DataError("one periodic flag is required per covariate")
        if self.values.shape[0] != self.covariates.shape[0]:
            raise DataError("values and covariates have different numbers of events")
        if not self.variate_names or not self.covariate_names:
            raise DataError("need at least one variate and one covariate")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.covariates))):
            raise DataError("sample contains non-finite values")
        for j, periodic in enumerate(self.covariate_is_periodic):
            if periodic and self.n_events:
                c = self.covariates[:, j]
                if np.any(c < 0.0) or np.any(c >= PERIOD):
                    raise DataError(
                        f"periodic covariate {self.covariate_names[j]!r} must lie in [0, 360)"
                    )
        if not self.period_years > 0:
            raise DataError("period_years must be positive")

    @property
    def n_events(self) -> int:
        return self.values.shape[0]

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def subset(self, index: np.ndarray) -> "StormPeakSample":
        """Rows ``index`` (with repetition allowed) as a new sample."""
        return StormPeakSample(
            self.values[index],
            self.covariates[index],
            list(self.variate_names),
            list(self.covariate_names),
            list(self.covariate_is_periodic),
            self.period_years,
        )


def _fmt(x: float) -> str:
    return f"{x:g}"


@dataclass
class BinPartition:
    """Cartesian partition of the covariate domain.

    Flat bin indices are row-major over covariates in declaration order (the
    last covariate varies fastest) and are zero-based in code; labels are
    human readable. For a periodic covariate with sorted edges
    ``e_0 < ... < e_{k-1}`` the intervals are ``[e_0, e_1), ...,
    [e_{k-1}, e_0)`` with the last one wrapping through 360. For a
    non-periodic covariate the ``k`` edges give ``k-1`` intervals, the last
    closed on the right so the covered range is allocated totally.
    """

    edges: list[np.ndarray]
    periodic: list[bool]
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.covariate_names:
            self.covariate_names = [f"C{j + 1}" for j in range(len(self.edges))]

    @property
    def n_covariates(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(
            len(e) if p else len(e) - 1 for e, p in zip(self.edges, self.periodic)
        )

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.shape))

    def flat_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.shape))

    def multi_index(self, b: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(b), self.shape))

    def interval(self, j: int, i: int) -> tuple[float, float]:
        e = self.edges[j]
        if self.periodic[j]:
            return float(e[i]), float(e[(i + 1) % len(e)])
        return float(e[i]), float(e[i + 1])

    def interval_label(self, j: int, i: int) -> str:
        lo, hi = self.interval(j, i)
        close = "]" if (not self.periodic[j] and i == self.shape[j] - 1) else ")"
        return f"{self.covariate_names[j]}:[{_fmt(lo)},{_fmt(hi)}{close}"

    def label(self, b: int) -> str:
        mi = self.multi_index(b)
        return "×".join(self.interval_label(j, i) for j, i in enumerate(mi))

    @property
    def labels(self) -> list[str]:
        return [self.label(b) for b in range(self.n_bins)]

    def covariate_index(self, j: int, x: np.ndarray) -> np.ndarray:
        """Interval index of each value of covariate ``j``."""
        x = np.asarray(x, dtype=float)
        e = self.edges[j]
        if self.periodic[j]:
            if np.any(x < 0.0) or np.any(x >= PERIOD):
                raise DataError(f"periodic covariate {self.covariate_names[j]!r} outside [0,360)")
            # values below the first edge belong to the wrap interval
            idx = np.searchsorted(e, x, side="right") - 1
            return np.where(idx < 0, len(e) - 1, idx)
        if np.any(x < e[0]) or np.any(x > e[-1]):
            raise DataError(
                f"covariate {self.covariate_names[j]!r} has values outside the bin edges "
                f"[{_fmt(e[0])}, {_fmt(e[-1])}]"
            )
        idx = np.searchsorted(e, x, side="right") - 1
        return np.minimum(idx, len(e) - 2)

    def assign(self, covariates: np.ndarray) -> np.ndarray:
        """Flat zero-based bin index of each row of ``covariates``."""
        covariates = np.asarray(covariates, dtype=float).reshape(-1, self.n_covariates)
        if covariates.shape[0] == 0:
            return np.zeros(0, dtype=int)
        parts = [self.covariate_index(j, covariates[:, j]) for j in range(self.n_covariates)]
        return np.ravel_multi_index(tuple(parts), self.shape).astype(int)

    def sample_uniform(self, bins: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Covariate values drawn uniformly within each requested bin."""
        bins = np.asarray(bins, dtype=int)
        out = np.empty((bins.size, self.n_covariates))
        mi = np.unravel_index(bins, self.shape) if bins.size else [np.zeros(0, int)] * self.n_covariates
        for j in range(self.n_covariates):
            u = rng.random(bins.size)
            lo = np.array([self.interval(j, i)[0] for i in range(self.shape[j])])
            hi = np.array([self.interval(j, i)[1] for i in range(self.shape[j])])
            if self.periodic[j]:
                width = np.mod(hi - lo, PERIOD)
                width = np.where(width == 0.0, PERIOD, width)
                out[:, j] = np.mod(lo[mi[j]] + u * width[mi[j]], PERIOD)
            else:
                out[:, j] = lo[mi[j]] + u * (hi[mi[j]] - lo[mi[j]])
        return out

    def to_dict(self) -> dict:
        return {
            "covariate_names": list(self.covariate_names),
            "periodic": [bool(p) for p in self.periodic],
            "edges": [[float(v) for v in e] for e in self.edges],
            "n_bins": self.n_bins,
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinPartition":
        return build_partition(d["edges"], d["periodic"], d.get("covariate_names"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def build_partition(
    edges_per_covariate: Sequence[Sequence[float]],
    periodic_flags: Sequence[bool],
    covariate_names: Sequence[str] | None = None,
) -> BinPartition:
    """Build a Cartesian bin partition from per-covariate cut points.

    Periodic edge lists may be given in any cyclic rotation; they are sorted
    onto [0, 360).

    Raises:
        DataError: on empty or duplicate edges, periodic edges outside
            [0, 360), or fewer than two edges for a non-periodic covariate.
    """
    if len(edges_per_covariate) != len(periodic_flags):
        raise DataError("one periodic flag is required per covariate")
    out = []
    for j, (e, p) in enumerate(zip(edges_per_covariate, periodic_flags)):
        e = np.asarray(e, dtype=float).ravel()
        if e.size == 0:
            raise DataError(f"covariate {j}: empty edge list")
        if not np.all(np.isfinite(e)):
            raise DataError(f"covariate {j}: non-finite edge")
        if p:
            if np.any(e < 0.0) or np.any(e >= PERIOD):
                raise DataError(f"covariate {j}: periodic edges must lie in [0, 360)")
            e = np.sort(e)
        else:
            if e.size < 2:
                raise DataError(f"covariate {j}: a non-periodic covariate needs two or more edges")
            if np.any(np.diff(e) < 0):
                raise DataError(f"covariate {j}: edges must be increasing")
        if np.any(np.diff(e) == 0):
            raise DataError(f"covariate {j}: duplicate edges")
        out.append(e)
    names = list(covariate_names) if covariate_names else []
    return BinPartition(out, [bool(p) for p in periodic_flags], names)


@dataclass
class Allocation:
    """Event-to-bin map with bin occupancies and empirical rates."""

    a: np.ndarray
    n_bins: int
    period_years: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=int)

    @property
    def occupancy(self) -> np.ndarray:
        return np.bincount(self.a, minlength=self.n_bins)

    @property
    def p(self) -> np.ndarray:
        """Empirical probability that a storm falls in each bin."""
        n = self.a.size
        return self.occupancy / n if n else np.zeros(self.n_bins)

    @property
    def rho(self) -> float:
        """Storms per year."""
        return self.a.size / self.period_years

    @property
    def empty_bins(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy == 0)


def allocate_bins(sample: StormPeakSample, partition: BinPartition) -> Allocation:
    """Assign every event of ``sample`` to exactly one bin of ``partition``."""
    if sample.n_covariates != partition.n_covariates:
        raise DataError(
            f"sample has {sample.n_covariates} covariates, partition has {partition.n_covariates}"
        )
    return Allocation(partition.assign(sample.covariates), partition.n_bins, sample.period_years)


class BinAllocator(TransformerMixin, BaseEstimator):
    """Transformer mapping covariate rows to flat bin indices.

    Parameters
    ----------
    edges : list of sequences
        Cut points per covariate.
    periodic : list of bool
        Whether each covariate is an angle on [0, 360).
    covariate_names : list of str, optional
    """

    def __init__(self, edges, periodic, covariate_names=None):
        self.edges = edges
        self.periodic = periodic
        self.covariate_names = covariate_names

    def fit(self, X=None, y=None):
        self.partition_ = build_partition(self.edges, self.periodic, self.covariate_names)
        self.n_bins_ = self.partition_.n_bins
        if X is not None:
            X = np.asarray(X, dtype=float).reshape(-1, self.partition_.n_covariates)
            self.occupancy_ = np.bincount(self.partition_.assign(X), minlength=self.n_bins_)
        return self

    def transform(self, X):
        check_is_fitted(self, "partition_")
        return self.partition_.assign(X)


def iter_bins(partition: BinPartition):
    """Yield ``(flat_index, multi_index)`` in flat order."""
    for b, mi in enumerate(itertools.product(*(range(s) for s in partition.shape))):
        yield b, mi
