"""The training loss: scaled reconstruction MSE plus the weighted
single-sample posterior/prior log-density gap.

Both terms are normalized per observation entry (T * m), so the balance
between them is controlled only by v_y and beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnum as dn
from .errors import ConfigError, DimensionError
from .model import MlpParams, log_posterior, mlp_forward, reparameterize
from .prior import GmmPriorParams, log_prior


@dataclass
class LossBreakdown:
    total: float
    rec: float
    kl_surrogate: float
    log_q: float
    log_p: float


def rec_loss(tape: dn.Tape, Y_hat, Y, v_y: float) -> dn.Node:
    """(1 / (2 v_y T m)) * sum of squared reconstruction errors."""
    if v_y <= 0.0:
        raise ConfigError(f"v_y must be > 0, got {v_y}")
    Y_hat = Y_hat if isinstance(Y_hat, dn.Node) else tape.constant(Y_hat)
    Y = np.asarray(Y, dtype=np.float64)
    if Y_hat.shape != Y.shape:
        raise DimensionError(f"Y_hat is {Y_hat.shape}, Y is {Y.shape}")
    T, m = Y.shape
    sq = dn.sum_all(dn.square(Y_hat - tape.constant(Y)))
    return sq * (1.0 / (2.0 * v_y * T * m))


def kl_surrogate(log_q: dn.Node, log_p: dn.Node, beta: float, T: int, m: int) -> dn.Node:
    """beta * (log_q - log_p) / (T m), evaluated at the sampled latents.

    This is a single-sample estimator of the scaled KL term; its pointwise
    value may be negative even though its expectation is not.
    """
    if beta <= 0.0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    return (log_q - log_p) * (beta / (T * m))


def total_loss(
    tape: dn.Tape,
    encoder: MlpParams,
    decoder: MlpParams,
    prior: GmmPriorParams,
    log_var,
    Y: np.ndarray,
    noise: np.ndarray,
    v_y: float,
    beta: float,
) -> tuple[dn.Node, LossBreakdown]:
    """encode -> reparameterize -> decode -> rec + kl, all on one tape."""
    Y = np.asarray(Y, dtype=np.float64)
    T, m = Y.shape
    mu = mlp_forward(tape, encoder, Y)
    z = reparameterize(tape, mu, log_var, noise)
    Y_hat = mlp_forward(tape, decoder, z)
    rec = rec_loss(tape, Y_hat, Y, v_y)
    log_q = log_posterior(tape, mu, log_var, z)
    log_p = log_prior(tape, prior, z)
    kl = kl_surrogate(log_q, log_p, beta, T, m)
    total = rec + kl
    breakdown = LossBreakdown(
        total=float(total.value[0, 0]),
        rec=float(rec.value[0, 0]),
        kl_surrogate=float(kl.value[0, 0]),
        log_q=float(log_q.value[0, 0]),
        log_p=float(log_p.value[0, 0]),
    )
    return total, breakdown
