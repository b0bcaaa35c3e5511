"""Synthetic ground-truth sources and their linear / tanh-tanh mixtures.

Sources are i.i.d. draws from per-column 1-D Gaussian mixtures. Mixtures are
either Y = Z A^T (linear) or Y = tanh(tanh(Z A1^T) A2^T) applied row-wise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError
from .storage import read_matrix_csv, write_matrix_csv

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    mean: float
    std: float


@dataclass(frozen=True)
class SourceSpec:
    """Marginal distribution of one source: a 1-D Gaussian mixture."""

    components: tuple[GmmComponent, ...]

    def validate(self):
        if not self.components:
            raise ValidationError("SourceSpec needs at least one component")
        total = 0.0
        for i, c in enumerate(self.components):
            if c.weight < 0.0:
                raise ValidationError(f"component {i}: weight {c.weight} is negative")
            if c.std <= 0.0:
                raise ValidationError(f"component {i}: std {c.std} must be > 0")
            total += c.weight
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"component weights sum to {total!r}, expected 1")

    @property
    def mean(self) -> float:
        return sum(c.weight * c.mean for c in self.components)

    @property
    def variance(self) -> float:
        second = sum(c.weight * (c.std**2 + c.mean**2) for c in self.components)
        return second - self.mean**2

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        self.validate()
        weights = np.array([c.weight for c in self.components])
        means = np.array([c.mean for c in self.components])
        stds = np.array([c.std for c in self.components])
        idx = rng.choice(len(self.components), size=count, p=weights / weights.sum())
        return rng.normal(means[idx], stds[idx])

    def to_json_obj(self):
        return [
            {"weight": c.weight, "mean": c.mean, "std": c.std}
            for c in self.components
        ]

    @classmethod
    def from_json_obj(cls, obj) -> "SourceSpec":
        spec = cls(tuple(GmmComponent(c["weight"], c["mean"], c["std"]) for c in obj))
        spec.validate()
        return spec


def default_sources() -> list[SourceSpec]:
    """Three marginal classes: bimodal, heavy-tailed, asymmetric."""
    return [
        SourceSpec((GmmComponent(0.5, -2.0, 0.6), GmmComponent(0.5, 2.0, 0.6))),
        SourceSpec((GmmComponent(0.8, 0.0, 0.5), GmmComponent(0.2, 0.0, 2.5))),
        SourceSpec((GmmComponent(0.7, -1.0, 0.5), GmmComponent(0.3, 2.0, 0.8))),
    ]


@dataclass
class MixingSpec:
    """The ground-truth mixing map: linear A1 only, or tanh2 with A1 and A2."""

    kind: str  # "linear" | "tanh2"
    A1: np.ndarray
    A2: np.ndarray | None = None
    seed: int | None = None

    def validate(self, n: int | None = None):
        if self.kind not in ("linear", "tanh2"):
            raise ValidationError(f"unknown mixing kind {self.kind!r}")
        if self.kind == "linear":
            if self.A2 is not None:
                raise ValidationError("linear mixing takes a single matrix")
        else:
            if self.A2 is None:
                raise ValidationError("tanh2 mixing needs both A1 and A2")
            if self.A2.shape[1] != self.A1.shape[0]:
                raise ValidationError(
                    f"A2 columns ({self.A2.shape[1]}) must match A1 rows "
                    f"({self.A1.shape[0]})"
                )
            if np.linalg.matrix_rank(self.A1) < self.A1.shape[1]:
                raise ValidationError("A1 must have full column rank")
        if n is not None and self.A1.shape[1] != n:
            raise ValidationError(
                f"mixing expects {self.A1.shape[1]} sources, dataset has {n}"
            )

    @property
    def n_observed(self) -> int:
        return self.A1.shape[0] if self.kind == "linear" else self.A2.shape[0]

    def to_json_obj(self):
        obj = {"kind": self.kind, "A1": self.A1.tolist(), "seed": self.seed}
        obj["A2"] = None if self.A2 is None else self.A2.tolist()
        return obj

    @classmethod
    def from_json_obj(cls, obj) -> "MixingSpec":
        a2 = obj.get("A2")
        spec = cls(
            kind=obj["kind"],
            A1=np.asarray(obj["A1"], dtype=np.float64),
            A2=None if a2 is None else np.asarray(a2, dtype=np.float64),
            seed=obj.get("seed"),
        )
        spec.validate()
        return spec


def sample_sources(specs, T: int, seed) -> np.ndarray:
    """T x n matrix: column j drawn i.i.d. from specs[j]; deterministic per seed."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if not specs:
        raise ValidationError("need at least one SourceSpec")
    for j, spec in enumerate(specs):
        try:
            spec.validate()
        except ValidationError as e:
            raise ValidationError(f"source {j}: {e}") from e
    rng = np.random.default_rng(seed)
    cols = [spec.sample(T, rng) for spec in specs]
    return np.column_stack(cols)


def mix_linear(Z: np.ndarray, A: np.ndarray) -> np.ndarray:
    if Z.shape[1] != A.shape[1]:
        raise DimensionError(f"mix_linear: Z is {Z.shape}, A is {A.shape}")
    return Z @ A.T


def mix_tanh2(Z: np.ndarray, A1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    if Z.shape[1] != A1.shape[1]:
        raise DimensionError(f"mix_tanh2: Z is {Z.shape}, A1 is {A1.shape}")
    if A2.shape[1] != A1.shape[0]:
        raise DimensionError(f"mix_tanh2: A1 is {A1.shape}, A2 is {A2.shape}")
    return np.tanh(np.tanh(Z @ A1.T) @ A2.T)


def draw_linear_mixing(n: int, m: int, seed, cond_max: float = 20.0) -> MixingSpec:
    """Uniform [-1, 1] mixing matrix, rejection-sampled to cond(A) <= cond_max."""
    rng = np.random.default_rng(seed)
    while True:
        A = rng.uniform(-1.0, 1.0, size=(m, n))
        if np.linalg.cond(A) <= cond_max:
            break
    return MixingSpec(kind="linear", A1=A, seed=_seed_scalar(seed))


def draw_tanh2_mixing(specs, m: int, hidden: int, seed, target_std: float = 1.0,
                      pilot_size: int = 2000) -> MixingSpec:
    """tanh2 mixing matrices with rows scaled to a target pre-tanh std.

    Saturated tanh layers destroy source information, so A1 rows are scaled
    analytically (source-spec variances) and A2 rows against a deterministic
    pilot draw of the inner activations.
    """
    n = len(specs)
    variances = np.array([s.variance for s in specs])
    rng = np.random.default_rng(seed)
    while True:
        A1 = rng.uniform(-1.0, 1.0, size=(hidden, n))
        if np.linalg.matrix_rank(A1) == n:
            break
    row_std = np.sqrt((A1**2 * variances).sum(axis=1))
    A1 = target_std * A1 / row_std[:, None]
    A2 = rng.uniform(-1.0, 1.0, size=(m, hidden))
    pilot = np.column_stack([s.sample(pilot_size, rng) for s in specs])
    H = np.tanh(pilot @ A1.T)
    A2 = target_std * A2 / (H @ A2.T).std(axis=0, ddof=1)[:, None]
    return MixingSpec(kind="tanh2", A1=A1, A2=A2, seed=_seed_scalar(seed))


def _seed_scalar(seed):
    return int(seed) if np.isscalar(seed) else None


@dataclass
class Dataset:
    """Observed mixtures plus the ground truth that produced them."""

    Y: np.ndarray
    Z_true: np.ndarray
    sources: list[SourceSpec] = field(default_factory=list)
    mixing: MixingSpec | None = None
    seed: int | None = None

    def validate(self):
        if self.Y.shape[0] != self.Z_true.shape[0]:
            raise ValidationError(
                f"Y has {self.Y.shape[0]} rows, Z_true has {self.Z_true.shape[0]}"
            )

    @property
    def T(self) -> int:
        return self.Y.shape[0]


def generate_dataset(specs, mixing: MixingSpec, T: int, seed) -> Dataset:
    Z = sample_sources(specs, T, seed)
    mixing.validate(n=Z.shape[1])
    if mixing.kind == "linear":
        Y = mix_linear(Z, mixing.A1)
    else:
        Y = mix_tanh2(Z, mixing.A1, mixing.A2)
    return Dataset(Y=Y, Z_true=Z, sources=list(specs), mixing=mixing,
                   seed=_seed_scalar(seed))


def save_dataset(dataset: Dataset, out_dir) -> dict:
    """Write Y.csv, Z_true.csv and a spec.json sidecar; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    y_path = out / "Y.csv"
    z_path = out / "Z_true.csv"
    spec_path = out / "spec.json"
    m = dataset.Y.shape[1]
    n = dataset.Z_true.shape[1]
    write_matrix_csv(y_path, dataset.Y, [f"y{i+1}" for i in range(m)])
    write_matrix_csv(z_path, dataset.Z_true, [f"z{j+1}" for j in range(n)])
    sidecar = {
        "T": dataset.T,
        "seed": dataset.seed,
        "sources": [s.to_json_obj() for s in dataset.sources],
        "mixing": None if dataset.mixing is None else dataset.mixing.to_json_obj(),
    }
    spec_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return {"Y": str(y_path), "Z_true": str(z_path), "spec": str(spec_path)}


def load_dataset(data_dir) -> Dataset:
    data = Path(data_dir)
    y_path = data / "Y.csv"
    if not y_path.exists():
        raise ValidationError(f"no Y.csv in {data}")
    Y = read_matrix_csv(y_path)
    z_path = data / "Z_true.csv"
    Z = read_matrix_csv(z_path) if z_path.exists() else np.zeros((Y.shape[0], 0))
    sources: list[SourceSpec] = []
    mixing = None
    seed = None
    spec_path = data / "spec.json"
    if spec_path.exists():
        sidecar = json.loads(spec_path.read_text())
        sources = [SourceSpec.from_json_obj(s) for s in sidecar.get("sources", [])]
        if sidecar.get("mixing") is not None:
            mixing = MixingSpec.from_json_obj(sidecar["mixing"])
        seed = sidecar.get("seed")
    ds = Dataset(Y=Y, Z_true=Z, sources=sources, mixing=mixing, seed=seed)
    if Z.shape[1] > 0:
        ds.validate()
    return ds
