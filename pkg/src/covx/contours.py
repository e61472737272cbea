"""Lock points and bivariate environmental contours from joint samples.

All three estimators take a large sample of ``(x1, x2)`` pairs, typically
simulated from fitted marginal and dependence models, and force the contour
through a lock point.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.spatial import ConvexHull, HalfspaceIntersection
from skimage.measure import find_contours

from .dependence import HeffernanTawn, conditional_draws_at
from .exceptions import DataError, NumericalError
from .optim import rng_stream

DEFAULT_N_ANGLES = 360
DEFAULT_GRID = 200
DEFAULT_PAD = 0.05


@dataclass
class LockPoint:
    x1: float
    x2: float
    T: float
    subset: list | None = None

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass
class ContourSet:
    """Contour curves for one method; ``level`` is the preserved criterion value."""

    method: str
    polylines: list
    lock: LockPoint
    level: float
    bin_subset: list | None = None
    info: dict = field(default_factory=dict)

    def points(self) -> np.ndarray:
        pts = [p for p in self.polylines if len(p)]
        return np.vstack(pts) if pts else np.zeros((0, 2))

    def distance_to(self, xy) -> float:
        """Smallest distance from ``xy`` to any polyline segment."""
        xy = np.asarray(xy, dtype=float)
        best = np.inf
        for line in self.polylines:
            line = np.asarray(line, dtype=float)
            line = line[np.all(np.isfinite(line), axis=1)]
            if line.shape[0] == 0:
                continue
            if line.shape[0] == 1:
                best = min(best, float(np.hypot(*(line[0] - xy))))
                continue
            a, b = line[:-1], line[1:]
            ab = b - a
            den = np.einsum("ij,ij->i", ab, ab)
            t = np.clip(np.einsum("ij,ij->i", xy - a, ab) / np.where(den > 0, den, 1.0), 0.0, 1.0)
            proj = a + t[:, None] * ab
            best = min(best, float(np.min(np.hypot(*(proj - xy).T))))
        return best

    def rows(self):
        for k, line in enumerate(self.polylines):
            for x1, x2 in line:
                yield self.method, k, x1, x2


def write_contours_csv(path, contours) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "curve_id", "x1", "x2"])
        for c in contours:
            for method, k, x1, x2 in c.rows():
                w.writerow([method, k, repr(float(x1)), repr(float(x2))])


def _check_sample(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise DataError("contours need an (n, 2) sample")
    if sample.shape[0] < 10:
        raise DataError("sample too small for a contour")
    return sample


# ---------------------------------------------------------------------------
# lock point
# ---------------------------------------------------------------------------


def lock_point(T, marginals, ht: HeffernanTawn, bin_subset=None, n_samples=10000, seed=0, associated=0):
    """Return value of the conditioning variate and the conditional median at it.

    ``marginals[0]`` is the conditioning variate and ``marginals[1 +
    associated]`` the associated one.
    """
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
    x1 = marginals[0].return_value(T, np.exp(-1.0), bin_subset)
    subset, _ = marginals[0]._subset(bin_subset)
    V, _, _ = conditional_draws_at(ht, marginals, np.full(n_samples, x1), subset, rng)
    x2 = float(np.median(V[:, associated]))
    return LockPoint(float(x1), x2, float(T), None if bin_subset is None else [int(b) for b in subset])


# ---------------------------------------------------------------------------
# constant exceedance
# ---------------------------------------------------------------------------


def orthant_exceedance(sample, point, signs):
    """Fraction of ``sample`` strictly beyond ``point`` in the orthant ``signs``."""
    sample = np.asarray(sample, dtype=float)
    s = np.asarray(signs, dtype=float)
    return float(np.mean(np.all(s * sample > s * np.asarray(point, dtype=float), axis=1)))


def _angle_grid(n_angles, extra=None):
    theta = 2.0 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    if extra is not None:
        theta = np.sort(np.append(theta, np.mod(extra, 2.0 * np.pi)))
    return theta


def exceedance_contour(sample, lock: LockPoint, reference=None, n_angles=DEFAULT_N_ANGLES, bin_subset=None):
    """Constant outward-exceedance contour.

    Rays leave ``reference`` (default the componentwise median) in
    coordinates scaled by the sample standard deviations. Along a ray in the
    quadrant with signs ``s`` the point at radius ``h`` is
    ``r + h * scale * u``; its exceedance probability is the fraction of the
    sample beyond it in that orthant. Each sample point stops exceeding at
    a radius ``h_i``, so the radius with exceedance ``p`` is an order
    statistic of the ``h_i``. The target ``p`` is the exceedance of the lock
    point and the lock direction is added to the angle grid.
    """
    sample = _check_sample(sample)
    n = sample.shape[0]
    r = np.median(sample, axis=0) if reference is None else np.asarray(reference, dtype=float)
    scale = np.std(sample, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    dl = (lock.xy - r) / scale
    if np.all(dl == 0):
        raise DataError("lock point coincides with the reference point")
    sl = np.where(dl >= 0, 1.0, -1.0)
    p = orthant_exceedance(sample, lock.xy, sl)
    if p == 0.0:
        raise DataError("lock point lies outside the sample support; enlarge the sample")
    k = p * n
    theta_lock = float(np.arctan2(dl[1], dl[0]))
    theta = _angle_grid(n_angles, theta_lock)
    z = (sample - r) / scale
    pts = np.full((theta.size, 2), np.nan)
    for i, th in enumerate(theta):
        u = np.array([np.cos(th), np.sin(th)])
        s = np.where(u >= 0, 1.0, -1.0)
        au = np.abs(u)
        sz = s * z
        inside = np.all(sz > 0, axis=1)
        with np.errstate(divide="ignore"):
            bounds = np.where(au > 1e-15, sz / np.where(au > 1e-15, au, 1.0), np.inf)
        h = np.where(inside, bounds.min(axis=1), -np.inf)
        # exceedance at radius t is #{h > t} / n; choose t between order statistics
        kk = int(np.floor(k + 0.5))
        if kk < 1:
            continue
        if kk < n:
            hs = -np.partition(-h, [kk - 1, kk])
            above, below = hs[kk - 1], hs[kk]
        else:
            above, below = h.min(), -np.inf
        if not np.isfinite(above):
            continue
        t = 0.5 * (above + max(below, 0.0))
        pts[i] = r + t * scale * u
    keep = np.all(np.isfinite(pts), axis=1)
    line = pts[keep]
    if line.shape[0] and keep[0] and keep[-1]:
        line = np.vstack([line, line[:1]])
    return ContourSet("exceedance", [line], lock, p, bin_subset,
                      {"reference": r.tolist(), "lock_signs": sl.tolist()})


# ---------------------------------------------------------------------------
# direct sampling
# ---------------------------------------------------------------------------


class _TopProjections:
    """Largest projected values per angle for fast tail quantiles."""

    def __init__(self, z, theta, p_max):
        self.n = z.shape[0]
        self.normals = np.column_stack([np.cos(theta), np.sin(theta)])
        self.m = min(self.n, int(np.ceil(p_max * (self.n - 1))) + 2)
        top = np.empty((theta.size, self.m))
        for i, nv in enumerate(self.normals):
            proj = z @ nv
            part = np.partition(proj, self.n - self.m)[self.n - self.m :]
            top[i] = np.sort(part)[::-1]
        self.top = top

    def quantile(self, p):
        """Per-angle ``1 - p`` quantile with linear interpolation."""
        t = (self.n - 1) * p
        j = int(np.floor(t))
        if j + 1 >= self.m:
            raise ValueError("p beyond stored tail")
        w = t - j
        return (1.0 - w) * self.top[:, j] + w * self.top[:, j + 1]


def _halfplane_polygon(normals, C, interior):
    hs = np.column_stack([normals, -C])
    try:
        hsi = HalfspaceIntersection(hs, interior)
    except Exception as exc:  # qhull failures surface as QhullError
        raise NumericalError(f"half-plane intersection failed: {exc}") from None
    v = hsi.intersections
    v = v[np.all(np.isfinite(v), axis=1)]
    hull = ConvexHull(v)
    poly = v[hull.vertices]
    return np.vstack([poly, poly[:1]])


def direct_sampling_contour(sample, lock: LockPoint | None = None, n_angles=DEFAULT_N_ANGLES, p=None,
                            bin_subset=None, p_max=0.2):
    """Convex contour with constant tangent half-plane probability ``p``.

    For each unit normal ``n`` the support value is the ``1 - p`` sample
    quantile of ``x . n``; the contour is the boundary of the intersection
    of the half-planes ``x . n <= C``. Computations use coordinates centred
    on the sample mean and scaled by the standard deviations, which maps
    half-planes to half-planes. Without ``p`` the level is root-found so
    that the boundary passes through the lock point.
    """
    sample = _check_sample(sample)
    centre = sample.mean(axis=0)
    scale = np.std(sample, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (sample - centre) / scale
    theta = _angle_grid(n_angles)
    if lock is not None:
        zl = (lock.xy - centre) / scale
        theta = _angle_grid(n_angles, float(np.arctan2(zl[1], zl[0])))
    if p is not None:
        p_max = max(p_max, p)
    tp = _TopProjections(z, theta, min(p_max, 0.5))
    info = {}

    if p is None:
        if lock is None:
            raise ValueError("need either p or a lock point")

        def g(q):
            return float(np.max(tp.normals @ zl - tp.quantile(q)))

        lo, hi = 1.0 / sample.shape[0], min(p_max, 0.5) * (1 - 1e-9)
        glo, ghi = g(lo), g(hi)
        if glo >= 0:
            warnings.warn("lock point beyond the most extreme sample contour", RuntimeWarning)
            p, info["bracket"] = lo, "low"
        elif ghi <= 0:
            warnings.warn("lock point inside the least extreme contour tried", RuntimeWarning)
            p, info["bracket"] = hi, "high"
        else:
            for _ in range(200):
                mid = np.sqrt(lo * hi)
                if g(mid) < 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-12 * hi:
                    break
            p = 0.5 * (lo + hi)
    C = tp.quantile(p)
    if np.any(C <= 0):
        raise NumericalError("sample mean is not interior; use a smaller p")
    poly = _halfplane_polygon(tp.normals, C, np.zeros(2))
    line = centre + poly * scale
    return ContourSet("direct_sampling", [line], lock, float(p), bin_subset, info)


def is_convex(line, tol=1e-12) -> bool:
    """True if the closed polyline turns consistently in one direction."""
    pts = np.asarray(line, dtype=float)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if pts.shape[0] < 3:
        return True
    a = pts
    b = np.roll(pts, -1, axis=0)
    c = np.roll(pts, -2, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - b[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - b[:, 0])
    scale = np.max(np.abs(cross)) if cross.size else 1.0
    return bool(np.all(cross >= -tol * scale) or np.all(cross <= tol * scale))


# ---------------------------------------------------------------------------
# constant density
# ---------------------------------------------------------------------------


@dataclass
class DensityGrid:
    x1: np.ndarray
    x2: np.ndarray
    density: np.ndarray

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        i = (pts[:, 0] - self.x1[0]) / (self.x1[1] - self.x1[0])
        j = (pts[:, 1] - self.x2[0]) / (self.x2[1] - self.x2[0])
        return map_coordinates(self.density, [i, j], order=1, mode="nearest")


def kde_grid(sample, grid=DEFAULT_GRID, pad=DEFAULT_PAD, include=None, bandwidth=None) -> DensityGrid:
    """Binned Gaussian KDE on a regular grid with Silverman bandwidth.

    Counts on a ``grid x grid`` lattice over the padded sample range (and
    any ``include`` points) are smoothed with a Gaussian filter whose width
    equals the bandwidth in cells.
    """
    sample = _check_sample(sample)
    n = sample.shape[0]
    lo, hi = sample.min(axis=0), sample.max(axis=0)
    if include is not None:
        inc = np.atleast_2d(include)
        lo, hi = np.minimum(lo, inc.min(axis=0)), np.maximum(hi, inc.max(axis=0))
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - pad * span, hi + pad * span
    step = (hi - lo) / (grid - 1)
    centres = [lo[d] + step[d] * np.arange(grid) for d in range(2)]
    edges = [np.concatenate([c - 0.5 * s, [c[-1] + 0.5 * s]]) for c, s in zip(centres, step)]
    counts, _, _ = np.histogram2d(sample[:, 0], sample[:, 1], bins=edges)
    if bandwidth is None:
        bandwidth = np.std(sample, axis=0) * n ** (-1.0 / 6.0)
    sig = np.asarray(bandwidth, dtype=float) / step
    dens = gaussian_filter(counts, sigma=sig, mode="constant", truncate=4.0)
    dens /= n * step[0] * step[1]
    return DensityGrid(centres[0], centres[1], dens)


def ht_density_contour(sample, lock: LockPoint, grid=DEFAULT_GRID, pad=DEFAULT_PAD, bin_subset=None,
                       bandwidth=None) -> ContourSet:
    """Level set of the estimated joint density through the lock point.

    May return several disjoint curves.
    """
    kde = kde_grid(sample, grid, pad, include=lock.xy, bandwidth=bandwidth)
    c = float(kde(lock.xy)[0])
    if not c > 0:
        raise DataError("estimated density at the lock point is zero")
    curves = find_contours(kde.density, c)
    d1, d2 = kde.x1[1] - kde.x1[0], kde.x2[1] - kde.x2[0]
    lines = [np.column_stack([kde.x1[0] + cv[:, 0] * d1, kde.x2[0] + cv[:, 1] * d2]) for cv in curves]
    return ContourSet("ht_density", lines, lock, c, bin_subset, {"grid": kde})


def all_contours(sample, lock, n_angles=DEFAULT_N_ANGLES, grid=DEFAULT_GRID, bin_subset=None):
    return [
        exceedance_contour(sample, lock, n_angles=n_angles, bin_subset=bin_subset),
        direct_sampling_contour(sample, lock, n_angles=n_angles, bin_subset=bin_subset),
        ht_density_contour(sample, lock, grid=grid, bin_subset=bin_subset),
    ]
