"""Estimate containers: batch-means averages, histogram densities, grids.

All accumulators are mergeable; merging worker results in worker-id
order reproduces a sequential accumulation bit-exactly, which is what
makes parallel runs deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AverageEstimate:
    mean: float
    stderr: float
    n_samples: int
    n_batches: int
    flagged_fraction: float = 0.0

    def compatible(self, value: float, n_sigma: float = 3.0) -> bool:
        return abs(self.mean - value) <= n_sigma * max(self.stderr, 1e-300)


def batch_average(batch_means: np.ndarray, n_samples: int,
                  flagged: int = 0) -> AverageEstimate:
    """Batch-means estimate: mean over equal-size batches plus its stderr."""
    bm = np.asarray(batch_means, dtype=float)
    b = bm.size
    mean = float(bm.mean()) if b else float("nan")
    stderr = float(bm.std(ddof=1) / np.sqrt(b)) if b > 1 else float("inf")
    frac = flagged / n_samples if n_samples else 0.0
    return AverageEstimate(mean, stderr, n_samples, b, frac)


def combine_means(values: np.ndarray, stderrs: np.ndarray) -> tuple[float, float]:
    """Inverse-variance weighted mean of independent estimates."""
    w = 1.0 / np.asarray(stderrs, dtype=float) ** 2
    m = float(np.sum(w * values) / np.sum(w))
    return m, float(1.0 / np.sqrt(np.sum(w)))


@dataclass(frozen=True)
class DensityEstimate:
    """Normalized histogram density with per-bin batch-means errors.

    1D: ``edges`` has n_bins+1 entries, density integrates to 1.
    2D: ``edges`` is (x_edges, y_edges) and density is (nx, ny);
    the integral over the listed support is 1.
    """

    name: str
    edges: np.ndarray | tuple[np.ndarray, np.ndarray]
    density: np.ndarray
    stderr: np.ndarray
    n_samples: int

    @property
    def centers(self):
        if isinstance(self.edges, tuple):
            return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def normalization(self) -> float:
        if isinstance(self.edges, tuple):
            wx = np.diff(self.edges[0])[:, None]
            wy = np.diff(self.edges[1])[None, :]
            return float(np.sum(self.density * wx * wy))
        return float(np.sum(self.density * np.diff(self.edges)))


def density_from_batches(name: str, batch_counts: np.ndarray,
                         edges) -> DensityEstimate:
    """Histogram density from per-batch counts (batch axis first).

    Normalizes so the density integrates to one over the binned range and
    derives per-bin errors from the spread of per-batch densities.
    """
    counts = np.asarray(batch_counts, dtype=float)
    b = counts.shape[0]
    total = counts.sum()
    if isinstance(edges, tuple):
        wx = np.diff(edges[0])[:, None]
        wy = np.diff(edges[1])[None, :]
        widths = wx * wy
    else:
        widths = np.diff(np.asarray(edges))
    dens = counts.sum(axis=0) / (total * widths)
    # per-batch densities; batches with no samples contribute nothing
    btot = counts.reshape(b, -1).sum(axis=1)
    safe = np.where(btot > 0, btot, 1.0)
    bdens = counts / (safe.reshape((b,) + (1,) * (counts.ndim - 1)) * widths)
    stderr = bdens.std(axis=0, ddof=1) / np.sqrt(b) if b > 1 else np.full_like(dens, np.inf)
    return DensityEstimate(name, edges, dens, stderr, int(total))


@dataclass
class VelocityFieldGrid:
    """Time-sampled mean velocity per spatial cell."""

    x_edges: np.ndarray
    y_edges: np.ndarray
    weight: np.ndarray      # sample counts per cell
    vx_sum: np.ndarray
    vy_sum: np.ndarray
    min_weight: float = 10.0

    @property
    def mean_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.where(self.weight > 0, self.weight, 1.0)
        return self.vx_sum / w, self.vy_sum / w

    @property
    def insufficient(self) -> np.ndarray:
        """Cells with too little occupancy to report a mean velocity."""
        return self.weight < self.min_weight


def wls_line_fit(x: np.ndarray, y: np.ndarray, yerr: np.ndarray):
    """Weighted least squares line y = a + b x.

    Returns (intercept, slope, intercept_err, slope_err).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = 1.0 / np.asarray(yerr, float) ** 2
    sw = w.sum()
    sx = (w * x).sum()
    sy = (w * y).sum()
    sxx = (w * x * x).sum()
    sxy = (w * x * y).sum()
    d = sw * sxx - sx * sx
    a = (sxx * sy - sx * sxy) / d
    b = (sw * sxy - sx * sy) / d
    a_err = np.sqrt(sxx / d)
    b_err = np.sqrt(sw / d)
    return float(a), float(b), float(a_err), float(b_err)


def wls_through_origin(x: np.ndarray, y: np.ndarray, yerr: np.ndarray):
    """Weighted fit of y = b x; returns (slope, slope_err)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = 1.0 / np.asarray(yerr, float) ** 2
    sxx = (w * x * x).sum()
    b = (w * x * y).sum() / sxx
    return float(b), float(1.0 / np.sqrt(sxx))
