"""End-to-end training loop: reparameterized sampling, one gradient tape per
step, Adam updates, log-variance floors, and convergence tracking.

A run is strictly single-threaded and deterministic given its config, the
dataset, and the seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffnum as dn
from .diffnum import Param
from .errors import ConfigError, NumericalAbort, ValidationError
from .evalsep import match_sources
from .model import SeparationModel, mlp_apply, reparameterize  # noqa: F401  (reparameterize is part of this module's surface)
from .objective import LossBreakdown, total_loss
from .storage import write_rows_csv

logger = logging.getLogger("pdgmm")


@dataclass
class TrainConfig:
    n: int
    m: int
    K: int = 3
    T: int | None = None  # expected dataset rows; validated when set
    epochs: int = 20000
    learning_rate: float = 1e-3
    beta: float = 1.0
    v_y: float = 0.01
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (16,)
    decoder_hidden: tuple[int, ...] = ()
    batch_size: int | None = None  # None = full batch
    eval_every: int = 10
    variance_floor: float = -13.8  # floor on eta and posterior log_var
    convergence_window: int = 100
    convergence_tol: float = 1e-5
    standardize_y: bool = True
    posterior_log_var_init: float = math.log(0.01)
    prior_mean_range: tuple[float, float] = (-2.0, 2.0)

    def validate(self):
        for name in ("n", "m", "K", "epochs", "eval_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or (v < 1 and not (name == "epochs" and v == 0)):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.T is not None and self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.v_y <= 0:
            raise ConfigError(f"v_y must be > 0, got {self.v_y}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.convergence_window < 2:
            raise ConfigError("convergence_window must be >= 2")
        for h in (*self.encoder_hidden, *self.decoder_hidden):
            if not isinstance(h, int) or h < 1:
                raise ConfigError(f"hidden widths must be positive integers, got {h!r}")

    def to_json_obj(self):
        obj = asdict(self)
        obj["encoder_hidden"] = list(self.encoder_hidden)
        obj["decoder_hidden"] = list(self.decoder_hidden)
        obj["prior_mean_range"] = list(self.prior_mean_range)
        return obj

    @classmethod
    def from_json_obj(cls, obj) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        kwargs = dict(obj)
        for key in ("encoder_hidden", "decoder_hidden", "prior_mean_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


class AdamState:
    """First/second moment accumulators for a fixed parameter list."""

    def __init__(self, params: list[tuple[str, Param]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for _, p in params]
        self.v = [np.zeros_like(p.value) for _, p in params]


def adam_step(params: list[tuple[str, Param]], state: AdamState, lr: float,
              floor_value: float | None = None, floor_params=()):
    """Bias-corrected Adam update in place, then clamp the floored params."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (name, p) in enumerate(params):
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient in parameter {name}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if floor_value is not None:
        for p in floor_params:
            np.maximum(p.value, floor_value, out=p.value)


def converged(history, window: int, tol: float) -> bool:
    """True once the windowed-mean loss stops moving in relative terms.

    Compares the mean over the last `window` entries with the mean over the
    `window` before it; needs at least 2 * window entries.
    """
    if window < 2:
        raise ConfigError("window must be >= 2")
    h = list(history)
    if len(h) < 2 * window:
        return False
    recent = sum(h[-window:]) / window
    previous = sum(h[-2 * window : -window]) / window
    denom = max(abs(previous), 1e-300)
    return abs(recent - previous) / denom < tol


@dataclass
class TrainRecord:
    """Values tracked at eval points plus the raw per-epoch loss history."""

    epochs: list[int] = field(default_factory=list)
    breakdowns: list[LossBreakdown] = field(default_factory=list)
    posterior_vars: list[np.ndarray] = field(default_factory=list)
    prior_weights: list[np.ndarray] = field(default_factory=list)
    prior_means: list[np.ndarray] = field(default_factory=list)
    prior_vars: list[np.ndarray] = field(default_factory=list)
    max_corrs: list[np.ndarray | None] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    converged_epoch: int | None = None


def standardize_columns(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise standardization; returns (Y_std, mean, std)."""
    mean = Y.mean(axis=0)
    std = Y.std(axis=0, ddof=1)
    if np.any(std <= 0):
        bad = int(np.argmax(std <= 0))
        raise ValidationError(f"observation column {bad} has zero variance")
    return (Y - mean) / std, mean, std


def fit(config: TrainConfig, Y: np.ndarray, z_true: np.ndarray | None = None,
        checkpoint_dir=None) -> tuple[SeparationModel, TrainRecord]:
    """Run the training loop; returns the trained model and its record.

    On a non-finite loss or gradient the last finite parameters are written
    to checkpoint_dir (when given) and NumericalAbort is raised.
    """
    config.validate()
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != config.m:
        raise ValidationError(
            f"dataset Y has shape {Y.shape}, config expects T x {config.m}"
        )
    if config.T is not None and Y.shape[0] != config.T:
        raise ValidationError(
            f"dataset has {Y.shape[0]} rows, config expects T={config.T}"
        )
    if z_true is not None:
        z_true = np.asarray(z_true, dtype=np.float64)
        if z_true.shape[0] != Y.shape[0]:
            raise ValidationError(
                f"Z_true has {z_true.shape[0]} rows, Y has {Y.shape[0]}"
            )
        if z_true.shape[1] != config.n:
            raise ValidationError(
                f"Z_true has {z_true.shape[1]} columns, config expects n={config.n}"
            )

    if config.standardize_y:
        Y_fit, _, _ = standardize_columns(Y)
    else:
        Y_fit = Y
    T = Y_fit.shape[0]

    rng = np.random.default_rng(config.seed)
    model = SeparationModel.init(
        m=config.m,
        n=config.n,
        K=config.K,
        encoder_hidden=config.encoder_hidden,
        decoder_hidden=config.decoder_hidden,
        rng=rng,
        posterior_log_var_init=config.posterior_log_var_init,
        prior_mean_range=config.prior_mean_range,
    )
    named = model.named_params()
    state = AdamState(named)
    floor_params = (model.prior.eta, model.log_var)
    record = TrainRecord()

    def record_point(epoch: int, breakdown: LossBreakdown):
        record.epochs.append(epoch)
        record.breakdowns.append(breakdown)
        record.posterior_vars.append(np.exp(model.log_var.value[0]).copy())
        record.prior_weights.append(model.prior.weights())
        record.prior_means.append(model.prior.means())
        record.prior_vars.append(model.prior.variances())
        record.max_corrs.append(_track_corr(model, Y_fit, z_true))

    last_good = model.copy()
    batch = config.batch_size
    for epoch in range(1, config.epochs + 1):
        if batch is None:
            tape = dn.Tape()
            noise = rng.standard_normal((T, config.n))
            loss_node, breakdown = total_loss(
                tape, model.encoder, model.decoder, model.prior, model.log_var,
                Y_fit, noise, config.v_y, config.beta,
            )
            if not math.isfinite(breakdown.total):
                _abort(last_good, checkpoint_dir, epoch)
            tape.backward(loss_node)
            last_good = model.copy()
            try:
                adam_step(named, state, config.learning_rate,
                          config.variance_floor, floor_params)
            except NumericalAbort:
                _abort(last_good, checkpoint_dir, epoch)
        else:
            breakdown = _minibatch_epoch(
                config, model, named, state, floor_params, Y_fit, rng,
                last_good, checkpoint_dir, epoch,
            )
            last_good = model.copy()

        record.loss_history.append(breakdown.total)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record_point(epoch, breakdown)
        if converged(record.loss_history, config.convergence_window,
                     config.convergence_tol):
            record.converged_epoch = epoch
            if not record.epochs or record.epochs[-1] != epoch:
                record_point(epoch, breakdown)
            logger.info("converged at epoch %d", epoch)
            break

    if config.epochs == 0:
        tape = dn.Tape()
        noise = rng.standard_normal((T, config.n))
        _, breakdown = total_loss(
            tape, model.encoder, model.decoder, model.prior, model.log_var,
            Y_fit, noise, config.v_y, config.beta,
        )
        record.loss_history.append(breakdown.total)
        record_point(0, breakdown)
    return model, record


def _minibatch_epoch(config, model, named, state, floor_params, Y_fit, rng,
                     last_good, checkpoint_dir, epoch) -> LossBreakdown:
    """One pass over shuffled mini-batches; batch size replaces T in all
    denominators. Returns the mean breakdown over the epoch's batches."""
    T = Y_fit.shape[0]
    order = rng.permutation(T)
    sums = np.zeros(5)
    count = 0
    for start in range(0, T, config.batch_size):
        idx = order[start : start + config.batch_size]
        tape = dn.Tape()
        noise = rng.standard_normal((idx.size, config.n))
        loss_node, b = total_loss(
            tape, model.encoder, model.decoder, model.prior, model.log_var,
            Y_fit[idx], noise, config.v_y, config.beta,
        )
        if not math.isfinite(b.total):
            _abort(last_good, checkpoint_dir, epoch)
        tape.backward(loss_node)
        try:
            adam_step(named, state, config.learning_rate,
                      config.variance_floor, floor_params)
        except NumericalAbort:
            _abort(last_good, checkpoint_dir, epoch)
        sums += (b.total, b.rec, b.kl_surrogate, b.log_q, b.log_p)
        count += 1
    mean = sums / count
    return LossBreakdown(*mean)


def _track_corr(model: SeparationModel, Y_fit, z_true):
    if z_true is None:
        return None
    mu = mlp_apply(model.encoder, Y_fit)
    try:
        return np.asarray(match_sources(z_true, mu).abs_corrs)
    except ValidationError:
        # a collapsed latent column early in training; skip this point
        return np.full(z_true.shape[1], np.nan)


def _abort(last_good: SeparationModel, checkpoint_dir, epoch: int):
    from .model import save_checkpoint

    if checkpoint_dir is not None:
        save_checkpoint(last_good, checkpoint_dir)
        raise NumericalAbort(
            f"non-finite loss at epoch {epoch}; last finite parameters "
            f"saved to {checkpoint_dir}"
        )
    raise NumericalAbort(
        f"non-finite loss at epoch {epoch} (no checkpoint directory given)"
    )


def write_train_log(record: TrainRecord, config: TrainConfig, path):
    """One CSV row per eval point: losses, posterior variances, prior
    parameters, and per-source correlations when available."""
    n, K = config.n, config.K
    header = ["epoch", "total", "rec", "kl_surrogate", "log_q", "log_p"]
    header += [f"sigma2_{j+1}" for j in range(n)]
    for j in range(n):
        for k in range(K):
            header += [f"w_{j+1}_{k+1}", f"mu_{j+1}_{k+1}", f"var_{j+1}_{k+1}"]
    header += [f"abs_corr_{j+1}" for j in range(n)]
    rows = []
    for i, epoch in enumerate(record.epochs):
        b = record.breakdowns[i]
        row = [epoch, b.total, b.rec, b.kl_surrogate, b.log_q, b.log_p]
        row += list(record.posterior_vars[i])
        w, mu, var = (record.prior_weights[i], record.prior_means[i],
                      record.prior_vars[i])
        for j in range(n):
            for k in range(K):
                row += [w[j, k], mu[j, k], var[j, k]]
        corr = record.max_corrs[i]
        row += list(corr) if corr is not None else [None] * n
        rows.append(row)
    write_rows_csv(path, header, rows)
