"""Learnable per-dimension Gaussian mixture priors.

Each latent dimension j owns an independent K-component 1-D mixture with
unconstrained logits (softmax -> weights) and log-variances (exp -> variances),
so gradient steps can never leave the feasible region.
"""

from __future__ import annotations

import numpy as np

from . import diffnum as dn
from .diffnum import LOG_2PI, Param
from .errors import DimensionError, ValidationError


class GmmPriorParams:
    """Mixture logits, component means, and log variances, each n x K."""

    def __init__(self, alpha, mu_p, eta):
        self.alpha = alpha if isinstance(alpha, Param) else Param(alpha, "prior.alpha")
        self.mu_p = mu_p if isinstance(mu_p, Param) else Param(mu_p, "prior.mu_p")
        self.eta = eta if isinstance(eta, Param) else Param(eta, "prior.eta")
        shape = self.alpha.shape
        if self.mu_p.shape != shape or self.eta.shape != shape:
            raise DimensionError(
                f"prior parameter shapes differ: alpha {shape}, "
                f"mu_p {self.mu_p.shape}, eta {self.eta.shape}"
            )

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def K(self) -> int:
        return self.alpha.shape[1]

    @classmethod
    def init_default(cls, n: int, K: int, mean_range=(-2.0, 2.0)) -> "GmmPriorParams":
        """Uniform weights, means evenly spread over mean_range, unit variances."""
        alpha = np.zeros((n, K))
        if K == 1:
            means_row = np.array([0.5 * (mean_range[0] + mean_range[1])])
        else:
            means_row = np.linspace(mean_range[0], mean_range[1], K)
        mu_p = np.tile(means_row, (n, 1))
        eta = np.zeros((n, K))
        return cls(alpha, mu_p, eta)

    def weights(self) -> np.ndarray:
        """Row-wise softmax of the logits: each row sums to one."""
        return np.vstack([dn.softmax_row(r) for r in self.alpha.value])

    def variances(self) -> np.ndarray:
        return np.exp(self.eta.value)

    def means(self) -> np.ndarray:
        return self.mu_p.value.copy()

    def log_density_scalar(self, j: int, z: float) -> float:
        """log p(z) for dimension j, via log-sum-exp over the K components."""
        if not 0 <= j < self.n:
            raise DimensionError(f"dimension {j} out of range for n={self.n}")
        alpha = self.alpha.value[j]
        log_w = alpha - dn.log_sum_exp(alpha)
        eta = self.eta.value[j]
        mu = self.mu_p.value[j]
        log_norm = -0.5 * LOG_2PI - 0.5 * eta - 0.5 * (z - mu) ** 2 * np.exp(-eta)
        return dn.log_sum_exp(log_w + log_norm)

    def log_density_matrix(self, Z: np.ndarray) -> np.ndarray:
        """Vectorized log p(z_{t,j}) over a T x n matrix (plain floats)."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.n:
            raise DimensionError(f"Z must be T x {self.n}, got {Z.shape}")
        alpha = self.alpha.value
        log_w = alpha - _lse_rows(alpha)  # n x K
        eta = self.eta.value
        d = Z[:, :, None] - self.mu_p.value[None, :, :]  # T x n x K
        terms = (
            log_w[None, :, :]
            - 0.5 * LOG_2PI
            - 0.5 * eta[None, :, :]
            - 0.5 * d * d * np.exp(-eta)[None, :, :]
        )
        m = terms.max(axis=2)
        return m + np.log(np.exp(terms - m[:, :, None]).sum(axis=2))

    def density_grid(self, j: int, grid: np.ndarray) -> np.ndarray:
        """Prior density of dimension j on a grid of points."""
        Z = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
        full = np.zeros((Z.shape[0], self.n))
        full[:, j] = Z[:, 0]
        return np.exp(self.log_density_matrix(full)[:, j])

    def sample_from_prior(self, j: int, count: int, seed) -> np.ndarray:
        """count i.i.d. draws from dimension j's mixture, deterministic per seed."""
        if count < 1:
            raise ValidationError(f"count must be >= 1, got {count}")
        rng = np.random.default_rng(seed)
        w = dn.softmax_row(self.alpha.value[j])
        comp = rng.choice(self.K, size=count, p=w)
        mu = self.mu_p.value[j][comp]
        sigma = np.exp(0.5 * self.eta.value[j][comp])
        return rng.normal(mu, sigma)

    def params(self) -> list[tuple[str, Param]]:
        return [
            ("prior.alpha", self.alpha),
            ("prior.mu_p", self.mu_p),
            ("prior.eta", self.eta),
        ]

    def copy(self) -> "GmmPriorParams":
        return GmmPriorParams(
            self.alpha.value.copy(), self.mu_p.value.copy(), self.eta.value.copy()
        )

    def to_json_obj(self):
        return {
            "alpha": self.alpha.value.tolist(),
            "mu_p": self.mu_p.value.tolist(),
            "eta": self.eta.value.tolist(),
            "constrained": {
                "weights": self.weights().tolist(),
                "means": self.mu_p.value.tolist(),
                "variances": self.variances().tolist(),
            },
        }

    @classmethod
    def from_json_obj(cls, obj) -> "GmmPriorParams":
        return cls(
            np.asarray(obj["alpha"], dtype=np.float64),
            np.asarray(obj["mu_p"], dtype=np.float64),
            np.asarray(obj["eta"], dtype=np.float64),
        )


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def log_prior(tape: dn.Tape, prior: GmmPriorParams, Z) -> dn.Node:
    """Differentiable sum of log p(z_{t,j}) over all entries of Z (T x n).

    Gradients flow to Z and to all three prior parameter matrices.
    """
    Z = Z if isinstance(Z, dn.Node) else tape.constant(Z)
    if Z.shape[1] != prior.n:
        raise DimensionError(f"Z must be T x {prior.n}, got {Z.shape}")
    n, K = prior.n, prior.K
    alpha = tape.leaf(prior.alpha)
    mu = tape.leaf(prior.mu_p)
    eta = tape.leaf(prior.eta)
    log_w = alpha - dn.tile_cols(dn.logsumexp_rows(alpha), K)  # n x K

    total = None
    for j in range(n):
        zj = dn.tile_cols(dn.col(Z, j), K)  # T x K
        d = zj - dn.row(mu, j)
        inv_var = dn.exp(-dn.row(eta, j))  # 1 x K
        log_norm = (
            dn.mul(dn.square(d), inv_var) * -0.5
            + dn.row(eta, j) * -0.5
            + (-0.5 * LOG_2PI)
        )
        terms = log_norm + dn.row(log_w, j)  # T x K
        s = dn.sum_all(dn.logsumexp_rows(terms))
        total = s if total is None else total + s
    return total


def gaussian_log_density(z, mu, var) -> np.ndarray:
    """Plain-float Gaussian log density, broadcasting numpy-style."""
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * LOG_2PI - 0.5 * np.log(var) - 0.5 * (z - mu) ** 2 / var
