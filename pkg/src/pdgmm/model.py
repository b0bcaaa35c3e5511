"""Encoder/decoder MLPs and the shared-variance Gaussian posterior.

The encoder maps each observation row to a latent mean; the posterior
variance is one learnable scalar per latent dimension, shared across all
rows. The decoder maps latent rows back to observation space and always
ends in an identity layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnum as dn
from .diffnum import LOG_2PI, Param
from .errors import DimensionError, ValidationError
from .prior import GmmPriorParams

ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    W: Param  # fan_in x fan_out
    b: Param  # 1 x fan_out
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.b.shape != (1, self.W.shape[1]):
            raise DimensionError(
                f"bias shape {self.b.shape} does not match W {self.W.shape}"
            )


class MlpParams:
    """An ordered stack of affine layers with optional tanh activations."""

    def __init__(self, layers: list[Layer], name: str = "mlp"):
        if not layers:
            raise ValidationError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise DimensionError(
                    f"layer widths do not chain: {prev.W.shape} -> {nxt.W.shape}"
                )
        self.layers = layers
        self.name = name

    @property
    def in_width(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1].W.shape[1]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, name: str = "mlp") -> "MlpParams":
        """Glorot-uniform weights, zero biases; hidden tanh, identity head."""
        sizes = list(sizes)
        if len(sizes) < 2:
            raise ValidationError("need input and output widths")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            act = "identity" if i == len(sizes) - 2 else "tanh"
            layers.append(
                Layer(
                    Param(W, f"{name}.{i}.W"),
                    Param(np.zeros((1, fan_out)), f"{name}.{i}.b"),
                    act,
                )
            )
        return cls(layers, name=name)

    def params(self) -> list[tuple[str, Param]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{self.name}.{i}.W", layer.W))
            out.append((f"{self.name}.{i}.b", layer.b))
        return out

    def copy(self) -> "MlpParams":
        layers = [
            Layer(
                Param(l.W.value.copy(), l.W.name),
                Param(l.b.value.copy(), l.b.name),
                l.activation,
            )
            for l in self.layers
        ]
        return MlpParams(layers, name=self.name)


def mlp_forward(tape: dn.Tape, mlp: MlpParams, X) -> dn.Node:
    """Row-wise forward pass on the tape."""
    h = X if isinstance(X, dn.Node) else tape.constant(X)
    if h.shape[1] != mlp.in_width:
        raise DimensionError(
            f"{mlp.name}: input has {h.shape[1]} columns, expected {mlp.in_width}"
        )
    for layer in mlp.layers:
        h = dn.matmul(h, tape.leaf(layer.W)) + tape.leaf(layer.b)
        if layer.activation == "tanh":
            h = dn.tanh(h)
    return h


def mlp_apply(mlp: MlpParams, X: np.ndarray) -> np.ndarray:
    """Plain forward pass (no tape)."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != mlp.in_width:
        raise DimensionError(
            f"{mlp.name}: input shape {h.shape} incompatible with width {mlp.in_width}"
        )
    for layer in mlp.layers:
        h = h @ layer.W.value + layer.b.value
        if layer.activation == "tanh":
            h = np.tanh(h)
    return h


def encode(enc: MlpParams, Y: np.ndarray) -> np.ndarray:
    return mlp_apply(enc, Y)


def decode(dec: MlpParams, Z: np.ndarray) -> np.ndarray:
    return mlp_apply(dec, Z)


@dataclass
class PosteriorState:
    """Per-row latent means plus one shared log-variance per dimension."""

    mu: np.ndarray  # T x n
    log_var: np.ndarray  # (n,)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_var = np.asarray(self.log_var, dtype=np.float64).reshape(-1)
        if self.mu.shape[1] != self.log_var.size:
            raise DimensionError(
                f"mu has {self.mu.shape[1]} columns, log_var has {self.log_var.size}"
            )


def log_posterior(tape: dn.Tape, mu, log_var, Z) -> dn.Node:
    """Differentiable sum of log N(z | mu, exp(log_var)) over all entries.

    mu and Z are T x n (nodes or arrays); log_var is the 1 x n Param.
    """
    mu = mu if isinstance(mu, dn.Node) else tape.constant(mu)
    Z = Z if isinstance(Z, dn.Node) else tape.constant(Z)
    lv = tape.leaf(log_var) if isinstance(log_var, Param) else tape.constant(log_var)
    if mu.shape != Z.shape:
        raise DimensionError(f"mu is {mu.shape}, Z is {Z.shape}")
    if lv.shape != (1, mu.shape[1]):
        raise DimensionError(f"log_var must be 1 x {mu.shape[1]}, got {lv.shape}")
    T, n = mu.shape
    d2 = dn.square(Z - mu)
    quad = dn.sum_all(dn.mul(d2, dn.exp(-lv)))
    return (
        quad * -0.5
        + dn.sum_all(lv) * (-0.5 * T)
        + (-0.5 * LOG_2PI * T * n)
    )


def log_posterior_value(mu: np.ndarray, log_var: np.ndarray, Z: np.ndarray) -> float:
    """Plain-float counterpart of :func:`log_posterior`."""
    mu = np.asarray(mu, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64).reshape(-1)
    T, n = mu.shape
    quad = ((Z - mu) ** 2 * np.exp(-lv)).sum()
    return float(-0.5 * quad - 0.5 * T * lv.sum() - 0.5 * LOG_2PI * T * n)


def reparameterize(tape: dn.Tape, mu, log_var, noise) -> dn.Node:
    """z = mu + exp(log_var / 2) * eps, elementwise over the noise matrix.

    noise may be a T x n standard-normal array or a Generator to draw from.
    Gradients flow to mu (identity) and log_var (through the scale).
    """
    mu = mu if isinstance(mu, dn.Node) else tape.constant(mu)
    if isinstance(noise, np.random.Generator):
        noise = noise.standard_normal(mu.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.shape:
        raise DimensionError(f"noise is {noise.shape}, mu is {mu.shape}")
    lv = tape.leaf(log_var) if isinstance(log_var, Param) else tape.constant(log_var)
    sigma = dn.exp(lv * 0.5)  # 1 x n
    return mu + dn.mul(tape.constant(noise), sigma)


class SeparationModel:
    """Everything trainable: encoder, decoder, priors, posterior variances."""

    def __init__(self, encoder: MlpParams, decoder: MlpParams,
                 prior: GmmPriorParams, log_var: Param):
        if encoder.out_width != decoder.in_width:
            raise DimensionError(
                f"encoder emits {encoder.out_width} dims, decoder takes "
                f"{decoder.in_width}"
            )
        if prior.n != encoder.out_width:
            raise DimensionError(
                f"prior covers {prior.n} dims, encoder emits {encoder.out_width}"
            )
        if log_var.shape != (1, encoder.out_width):
            raise DimensionError(
                f"log_var must be 1 x {encoder.out_width}, got {log_var.shape}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.prior = prior
        self.log_var = log_var

    @property
    def n(self) -> int:
        return self.encoder.out_width

    @property
    def m(self) -> int:
        return self.encoder.in_width

    @classmethod
    def init(cls, m: int, n: int, K: int, encoder_hidden, decoder_hidden,
             rng: np.random.Generator, posterior_log_var_init: float,
             prior_mean_range=(-2.0, 2.0)) -> "SeparationModel":
        encoder = MlpParams.init((m, *encoder_hidden, n), rng, name="encoder")
        decoder = MlpParams.init((n, *decoder_hidden, m), rng, name="decoder")
        prior_params = GmmPriorParams.init_default(n, K, prior_mean_range)
        log_var = Param(np.full((1, n), posterior_log_var_init), "posterior.log_var")
        return cls(encoder, decoder, prior_params, log_var)

    def named_params(self) -> list[tuple[str, Param]]:
        out = self.encoder.params() + self.decoder.params() + self.prior.params()
        out.append(("posterior.log_var", self.log_var))
        return out

    def posterior_state(self, Y: np.ndarray) -> PosteriorState:
        return PosteriorState(mu=encode(self.encoder, Y),
                              log_var=self.log_var.value[0])

    def copy(self) -> "SeparationModel":
        return SeparationModel(
            self.encoder.copy(),
            self.decoder.copy(),
            self.prior.copy(),
            Param(self.log_var.value.copy(), self.log_var.name),
        )


CHECKPOINT_FORMAT = "pdgmm-checkpoint-v1"


def save_checkpoint(model: SeparationModel, out_dir, extra: dict | None = None):
    """manifest.json + prior.json + one flat little-endian float64 blob."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, p in model.encoder.params() + model.decoder.params():
        rows, cols = p.shape
        entries.append({"name": name, "rows": rows, "cols": cols, "offset": offset})
        blobs.append(np.ascontiguousarray(p.value, dtype="<f8"))
        offset += rows * cols
    with open(out / "weights.bin", "wb") as fh:
        for b in blobs:
            fh.write(b.tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "n": model.n,
        "m": model.m,
        "K": model.prior.K,
        "encoder": _arch_obj(model.encoder),
        "decoder": _arch_obj(model.decoder),
        "posterior_log_var": model.log_var.value[0].tolist(),
        "weights_file": "weights.bin",
        "weights": entries,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "prior.json").write_text(
        json.dumps(model.prior.to_json_obj(), indent=2) + "\n"
    )


def load_checkpoint(ckpt_dir) -> tuple[SeparationModel, dict]:
    ckpt = Path(ckpt_dir)
    manifest_path = ckpt / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json in {ckpt}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unrecognized checkpoint format {manifest.get('format')!r}")
    raw = np.frombuffer((ckpt / manifest["weights_file"]).read_bytes(), dtype="<f8")
    values = {}
    for e in manifest["weights"]:
        size = e["rows"] * e["cols"]
        values[e["name"]] = raw[e["offset"] : e["offset"] + size].reshape(
            e["rows"], e["cols"]
        )
    encoder = _mlp_from_obj(manifest["encoder"], values, "encoder")
    decoder = _mlp_from_obj(manifest["decoder"], values, "decoder")
    prior_params = GmmPriorParams.from_json_obj(
        json.loads((ckpt / "prior.json").read_text())
    )
    log_var = Param(
        np.asarray(manifest["posterior_log_var"], dtype=np.float64).reshape(1, -1),
        "posterior.log_var",
    )
    model = SeparationModel(encoder, decoder, prior_params, log_var)
    return model, manifest


def _arch_obj(mlp: MlpParams):
    return {
        "layers": [
            {
                "in": l.W.shape[0],
                "out": l.W.shape[1],
                "activation": l.activation,
            }
            for l in mlp.layers
        ]
    }


def _mlp_from_obj(obj, values: dict, name: str) -> MlpParams:
    layers = []
    for i, lo in enumerate(obj["layers"]):
        W = values[f"{name}.{i}.W"].copy()
        b = values[f"{name}.{i}.b"].copy()
        layers.append(
            Layer(Param(W, f"{name}.{i}.W"), Param(b, f"{name}.{i}.b"), lo["activation"])
        )
    return MlpParams(layers, name=name)
