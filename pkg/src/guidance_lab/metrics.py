"""Sample-quality metrics: transport distance, KS, moments, and PRDC.

PRDC (precision, recall, density, coverage) ships with two routes that must
agree exactly: a brute-force path over all pairs and a grid-bucketed path
that prunes candidate pairs before applying the same scalar arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

__all__ = [
    "wasserstein2_1d",
    "ks_statistic",
    "moments",
    "prdc",
    "PrdcResult",
    "bootstrap_weighted_moments",
]


def _column(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-d sample")
    return arr


def wasserstein2_1d(a, b) -> float:
    """Order-2 transport distance between two empirical 1-d distributions.

    Equal sizes reduce to the root mean square difference of sorted samples;
    otherwise both empirical quantile functions are evaluated on the midpoint
    grid of the larger sample size.
    """
    a, b = _column(a), _column(b)
    if a.size == b.size:
        diff = np.sort(a) - np.sort(b)
        return float(np.sqrt(np.mean(diff**2)))
    m = max(a.size, b.size)
    q = (np.arange(m) + 0.5) / m
    qa = np.quantile(a, q, method="linear")
    qb = np.quantile(b, q, method="linear")
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup CDF difference)."""
    return float(ks_2samp(_column(a), _column(b)).statistic)


def moments(a) -> np.ndarray:
    """[mean, unbiased variance, third central, fourth central] of a 1-d sample."""
    a = _column(a)
    m = float(np.mean(a))
    centered = a - m
    var = float(np.sum(centered**2) / (a.size - 1)) if a.size > 1 else 0.0
    return np.array([m, var, float(np.mean(centered**3)), float(np.mean(centered**4))])


@dataclass(frozen=True)
class PrdcResult:
    precision: float
    recall: float
    density: float
    coverage: float

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "density": self.density,
            "coverage": self.coverage,
        }


def _pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All pairwise Euclidean distances via elementwise differences.

    Both PRDC routes funnel through this same arithmetic so their float
    results are identical, not just close.
    """
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))


def _knn_radii_exact(pts: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Distance to the k-th nearest neighbor excluding self, for each point.

    The self-distance 0 is present in every row, so the k-th smallest entry
    of the row (0-indexed partition at k) is the k-th neighbor distance.
    """
    n = pts.shape[0]
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d = _pair_distances(pts[lo:hi], pts)
        out[lo:hi] = np.partition(d, k, axis=1)[:, k]
    return out


def _prdc_exact(real: np.ndarray, fake: np.ndarray, k: int, chunk: int = 512) -> PrdcResult:
    real_r = _knn_radii_exact(real, k, chunk)
    fake_r = _knn_radii_exact(fake, k, chunk)
    n_real, n_fake = real.shape[0], fake.shape[0]
    fake_in_real = np.zeros(n_fake, dtype=bool)
    real_hit_by_fake = np.zeros(n_real, dtype=bool)
    real_in_fake = np.zeros(n_real, dtype=bool)
    density_counts = np.zeros(n_fake)
    for lo in range(0, n_fake, chunk):
        hi = min(lo + chunk, n_fake)
        d = _pair_distances(fake[lo:hi], real)  # (chunk, n_real)
        inside = d < real_r[None, :]
        fake_in_real[lo:hi] = np.any(inside, axis=1)
        density_counts[lo:hi] = np.sum(inside, axis=1)
        real_hit_by_fake |= np.any(inside, axis=0)
        real_in_fake |= np.any(d < fake_r[lo:hi, None], axis=0)
    return PrdcResult(
        precision=float(np.mean(fake_in_real)),
        recall=float(np.mean(real_in_fake)),
        density=float(np.mean(density_counts) / k),
        coverage=float(np.mean(real_hit_by_fake)),
    )


class _Grid:
    """Cell-list index over points with a fixed cell width."""

    def __init__(self, pts: np.ndarray, width: float):
        self.pts = pts
        self.width = width
        self.cells: dict = {}
        keys = np.floor(pts / width).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(i)
        self.keys = keys

    def ring(self, key: tuple, r: int) -> list:
        """Point indices in cells at Chebyshev distance exactly r from key."""
        d = len(key)
        out: list = []
        if r == 0:
            return list(self.cells.get(key, ()))
        for offset in np.ndindex(*([2 * r + 1] * d)):
            off = tuple(o - r for o in offset)
            if max(abs(o) for o in off) != r:
                continue
            cell = tuple(k + o for k, o in zip(key, off))
            got = self.cells.get(cell)
            if got:
                out.extend(got)
        return out

    def within(self, key: tuple, rings: int) -> list:
        """Point indices in all cells up to Chebyshev distance `rings`."""
        out: list = []
        for r in range(rings + 1):
            out.extend(self.ring(key, r))
        return out


def _knn_radii_grid(pts: np.ndarray, k: int, width: float) -> np.ndarray:
    """Same k-th neighbor distances as the exact route, via ring expansion.

    Candidates gathered out to Chebyshev ring r cover every point within
    Euclidean distance (r - 1) * width of the query (cells are width wide,
    so ring >= r + 1 implies distance > r * width after accounting for the
    query's own offset inside its cell); expansion stops once the current
    k-th candidate distance is below that certified bound.
    """
    n = pts.shape[0]
    grid = _Grid(pts, width)
    out = np.empty(n)
    max_ring = int(np.max(np.abs(grid.keys))) * 2 + 2
    for i in range(n):
        key = tuple(grid.keys[i])
        cand: list = []
        r = 0
        kth = np.inf
        while True:
            cand.extend(grid.ring(key, r))
            if len(cand) > k:
                d = _pair_distances(pts[i : i + 1], pts[cand])[0]
                kth = np.partition(d, k)[k]
            if kth <= max(r - 1, 0) * width or r > max_ring:
                break
            r += 1
        out[i] = kth
    return out


def _prdc_grid(real: np.ndarray, fake: np.ndarray, k: int) -> PrdcResult:
    scale = max(
        float(np.max(np.ptp(real, axis=0))) if real.shape[0] > 1 else 0.0,
        float(np.max(np.ptp(fake, axis=0))) if fake.shape[0] > 1 else 0.0,
    )
    if scale <= 0.0:
        return _prdc_exact(real, fake, k)
    width = scale * (k + 1.0) ** (1.0 / real.shape[1]) / max(
        real.shape[0], fake.shape[0]
    ) ** (1.0 / real.shape[1])
    width = max(width, scale * 1e-6)
    real_r = _knn_radii_grid(real, k, width)
    fake_r = _knn_radii_grid(fake, k, width)

    n_real, n_fake = real.shape[0], fake.shape[0]
    fake_in_real = np.zeros(n_fake, dtype=bool)
    real_hit_by_fake = np.zeros(n_real, dtype=bool)
    real_in_fake = np.zeros(n_real, dtype=bool)
    density_counts = np.zeros(n_fake)

    # pass 1: fake queries against real radii (precision, density, coverage)
    r_max = float(np.max(real_r))
    grid_real = _Grid(real, max(r_max, width))
    rings = 1
    for j in range(n_fake):
        key = tuple(np.floor(fake[j] / grid_real.width).astype(np.int64))
        cand = grid_real.within(key, rings)
        if not cand:
            continue
        d = _pair_distances(fake[j : j + 1], real[cand])[0]
        inside = d < real_r[cand]
        fake_in_real[j] = bool(np.any(inside))
        density_counts[j] = float(np.sum(inside))
        hit = np.asarray(cand)[inside]
        real_hit_by_fake[hit] = True

    # pass 2: real queries against fake radii (recall)
    f_max = float(np.max(fake_r))
    grid_fake = _Grid(fake, max(f_max, width))
    for i in range(n_real):
        key = tuple(np.floor(real[i] / grid_fake.width).astype(np.int64))
        cand = grid_fake.within(key, rings)
        if not cand:
            continue
        d = _pair_distances(real[i : i + 1], fake[cand])[0]
        real_in_fake[i] = bool(np.any(d < fake_r[cand]))

    return PrdcResult(
        precision=float(np.mean(fake_in_real)),
        recall=float(np.mean(real_in_fake)),
        density=float(np.mean(density_counts) / k),
        coverage=float(np.mean(real_hit_by_fake)),
    )


def prdc(real, fake, k: int = 3, route: str = "exact") -> PrdcResult:
    """Precision/recall/density/coverage of `fake` against `real`.

    Neighborhood radii are k-th nearest neighbor distances (self excluded)
    and all comparisons are strict, so two identical generic sample sets
    score 1.0 on all four values.  route is 'exact' (all pairs) or 'grid'
    (cell-list pruning); both produce identical floats.
    """
    real = np.atleast_2d(np.asarray(real, dtype=float))
    fake = np.atleast_2d(np.asarray(fake, dtype=float))
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise ValueError("real and fake must be (n, d) arrays of equal dimension")
    if not 1 <= k < min(real.shape[0], fake.shape[0]):
        raise ValueError("need 1 <= k < both sample sizes")
    if route == "exact":
        return _prdc_exact(real, fake, k)
    if route == "grid":
        return _prdc_grid(real, fake, k)
    raise ValueError(f"unknown route '{route}'")


def bootstrap_weighted_moments(
    points, log_weights, *, n_boot: int = 200, seed: int = 0, groups=None
) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrap standard errors of the weighted mean and weighted variance.

    Resamples (point, weight) pairs uniformly with replacement and recomputes
    the self-normalized statistics; returns (se_mean, se_var), each shaped
    like one point.

    When ``groups`` labels correlated points (particles duplicated by a
    resampling step share a label), whole groups are resampled instead of
    individual pairs, so the standard errors reflect the dependence.  With
    all-distinct labels this reduces to the pair bootstrap.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    lw = np.asarray(log_weights, dtype=float)
    n = pts.shape[0]
    if groups is None:
        members = [np.array([i]) for i in range(n)]
    else:
        labels = np.asarray(groups)
        if labels.shape != (n,):
            raise ValueError("groups must label each point exactly once")
        order = np.argsort(labels, kind="stable")
        boundaries = np.flatnonzero(np.diff(labels[order])) + 1
        members = np.split(order, boundaries)
    n_groups = len(members)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    means = np.empty((n_boot, pts.shape[1]))
    variances = np.empty((n_boot, pts.shape[1]))
    for b in range(n_boot):
        pick = rng.integers(0, n_groups, size=n_groups)
        idx = np.concatenate([members[g] for g in pick])
        w = np.exp(lw[idx] - np.max(lw[idx]))
        w = w / np.sum(w)
        m = np.sum(w[:, None] * pts[idx], axis=0)
        means[b] = m
        variances[b] = np.sum(w[:, None] * (pts[idx] - m) ** 2, axis=0)
    return np.std(means, axis=0, ddof=1), np.std(variances, axis=0, ddof=1)
