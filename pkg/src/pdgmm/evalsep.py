"""Source-recovery scoring: correlation matching up to the usual sign and
permutation indeterminacies, plus marginal density comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateColumnError, DimensionError, ValidationError
from .prior import GmmPriorParams

STD_TOL = 1e-12


def zscore(X: np.ndarray) -> np.ndarray:
    """Column-wise standardization with sample std (divisor T - 1)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"zscore expects a matrix, got ndim={X.ndim}")
    if X.shape[0] < 2:
        raise ValidationError("zscore needs at least two rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    bad = std <= STD_TOL * np.maximum(1.0, np.abs(mean))
    if np.any(bad):
        raise DegenerateColumnError(
            f"column {int(np.argmax(bad))} has zero standard deviation"
        )
    return (X - mean) / std


@dataclass
class MatchResult:
    """Optimal pairing of true sources to estimated columns."""

    assignment: list[int]  # true source j -> estimated column assignment[j]
    signs: list[int]
    abs_corrs: list[float]
    corr_matrix: np.ndarray  # corr_matrix[j, k] = corr(true j, est k)

    def to_json_obj(self):
        return {
            "assignment": [int(a) for a in self.assignment],
            "signs": [int(s) for s in self.signs],
            "abs_corrs": [float(c) for c in self.abs_corrs],
            "mean_abs_corr": float(np.mean(self.abs_corrs)),
            "corr_matrix": self.corr_matrix.tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj) -> "MatchResult":
        return cls(
            assignment=list(obj["assignment"]),
            signs=list(obj["signs"]),
            abs_corrs=list(obj["abs_corrs"]),
            corr_matrix=np.asarray(obj["corr_matrix"], dtype=np.float64),
        )


def correlation_matrix(Z_true: np.ndarray, Z_est: np.ndarray) -> np.ndarray:
    """Pearson correlations between all (true, estimated) column pairs."""
    zt = zscore(Z_true)
    ze = zscore(Z_est)
    return zt.T @ ze / (zt.shape[0] - 1)


def match_sources(Z_true: np.ndarray, Z_est: np.ndarray) -> MatchResult:
    """Assignment maximizing the summed |corr| over all pairings."""
    Z_true = np.asarray(Z_true, dtype=np.float64)
    Z_est = np.asarray(Z_est, dtype=np.float64)
    if Z_true.shape != Z_est.shape:
        raise DimensionError(
            f"Z_true is {Z_true.shape}, Z_est is {Z_est.shape}"
        )
    if Z_true.shape[0] < 3:
        raise ValidationError("match_sources needs at least 3 rows")
    corr = correlation_matrix(Z_true, Z_est)
    _, cols = linear_sum_assignment(-np.abs(corr))  # row indices come back sorted
    assignment = [int(c) for c in cols]
    matched = corr[np.arange(corr.shape[0]), assignment]
    signs = [1 if c >= 0 else -1 for c in matched]
    return MatchResult(
        assignment=assignment,
        signs=signs,
        abs_corrs=[float(abs(c)) for c in matched],
        corr_matrix=corr,
    )


@dataclass
class DensityTable:
    """Shared-grid marginal comparison for one matched source pair."""

    grid: np.ndarray  # bin centers
    gmm_density: np.ndarray  # learned prior, mapped to the z-scored scale
    true_density: np.ndarray  # histogram of the z-scored true source
    est_density: np.ndarray  # histogram of the z-scored estimate
    tv_distance: float
    bin_width: float


def freedman_diaconis_bins(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = q75 - q25
    width = 2.0 * iqr * x.size ** (-1.0 / 3.0)
    if width <= 0:
        width = (hi - lo) / 50.0
    count = max(int(np.ceil((hi - lo) / width)), 1)
    return np.linspace(lo, hi, count + 1)


def marginal_report(prior: GmmPriorParams, dim: int, z_true_col: np.ndarray,
                    z_est_col: np.ndarray, sign: int = 1) -> DensityTable:
    """Compare the z-scored true source, the z-scored (sign-aligned)
    estimate, and the learned prior density for latent dimension `dim`.

    The prior lives on the raw latent scale, so its density is pushed
    through the same affine map that z-scores the estimate.
    """
    zt = np.asarray(z_true_col, dtype=np.float64).reshape(-1)
    ze = np.asarray(z_est_col, dtype=np.float64).reshape(-1)
    if zt.size != ze.size:
        raise DimensionError(f"column lengths differ: {zt.size} vs {ze.size}")
    zt_n = zscore(zt.reshape(-1, 1))[:, 0]
    est_mean = ze.mean()
    est_std = ze.std(ddof=1)
    if est_std <= STD_TOL * max(1.0, abs(est_mean)):
        raise DegenerateColumnError("estimated column has zero standard deviation")
    ze_n = sign * (ze - est_mean) / est_std

    lo, hi = zt_n.min() - 1.0, zt_n.max() + 1.0
    edges = freedman_diaconis_bins(zt_n, lo, hi)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    true_hist, _ = np.histogram(zt_n, bins=edges, density=True)
    est_hist, _ = np.histogram(ze_n, bins=edges, density=True)
    tv = 0.5 * float(np.abs(true_hist - est_hist).sum() * width)
    # u on the z-scored axis corresponds to raw latent est_mean + sign*std*u
    raw_points = est_mean + sign * est_std * centers
    gmm_density = est_std * prior.density_grid(dim, raw_points)
    return DensityTable(
        grid=centers,
        gmm_density=gmm_density,
        true_density=true_hist,
        est_density=est_hist,
        tv_distance=tv,
        bin_width=float(width),
    )
