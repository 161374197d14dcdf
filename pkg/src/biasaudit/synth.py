"""Synthetic tables with known causal ground truth.

Two generators: a single-dataset mixer that interpolates between a
pure-causal and a pure-confounded structural model via a weight
``alpha``, and a multi-dataset generator with controllable per-dataset
shifts for the membership classifier.  Everything is deterministic
given the seed, and the mixer's ground-truth record carries enough to
recompute the target column bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np

from .tabular import Table, concat_tables


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the mixed causal/confounded generator.

    ``alpha`` = 1 is pure causality (causes drive the target), 0 is
    pure confounding (a shared latent drives causes and target).
    Weights and loadings default to unit-norm vectors drawn from the
    seed.
    """

    n: int = 500
    m: int = 3
    k: int = 1
    alpha: float = 1.0
    noise_sd: float = 0.5
    seed: int = 0
    dataset: str = "synthetic"
    weights: tuple[float, ...] | None = None       # causal weights on x, length m
    latent_loadings: tuple[float, ...] | None = None  # confounder weights on y, length k

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.n < 10:
            raise ValueError("need n >= 10")
        if self.m < 1 or self.k < 1:
            raise ValueError("need m >= 1 and k >= 1")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if self.weights is not None and len(self.weights) != self.m:
            raise ValueError("weights must have length m")
        if self.latent_loadings is not None and len(self.latent_loadings) != self.k:
            raise ValueError("latent_loadings must have length k")


@dataclass
class GroundTruth:
    """Everything needed to replay the generated target column exactly."""

    alpha: float
    weights: np.ndarray          # (m,) causal weights
    cause_loadings: np.ndarray   # (m, k) latent-to-cause loadings, unit-norm rows
    latent_loadings: np.ndarray  # (k,) latent-to-target weights
    noise_sd: float
    seed: int
    latents: np.ndarray          # (n, k) confounder draws
    noise: np.ndarray            # (n,) target noise draws

    def replay_target(self, causes: np.ndarray) -> np.ndarray:
        """Recompute the target from the cause matrix and stored draws."""
        return (self.alpha * (causes @ self.weights)
                + (1.0 - self.alpha) * (self.latents @ self.latent_loadings)
                + self.noise)


def _unit_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def gen_mixed(spec: GenSpec) -> tuple[Table, GroundTruth]:
    """Draw one dataset from the mixed structural model.

    Each cause column is ``sqrt(alpha)`` parts independent noise and
    ``sqrt(1-alpha)`` parts latent-driven, so it has unit variance for
    every alpha.  The target mixes the causal and latent channels with
    weights alpha and 1-alpha plus observation noise.  Cause columns
    are written as features ``vol_x1..vol_xm``, the target as
    ``vol_y``; age and sex are schema filler, not part of the
    structure.
    """
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((spec.n, spec.k))
    eps_x = rng.standard_normal((spec.n, spec.m))
    cause_loadings = _unit_rows(rng, spec.m, spec.k)
    if spec.weights is not None:
        weights = np.asarray(spec.weights, dtype=float)
    else:
        weights = _unit_rows(rng, 1, spec.m)[0]
    if spec.latent_loadings is not None:
        latent_loadings = np.asarray(spec.latent_loadings, dtype=float)
    else:
        latent_loadings = _unit_rows(rng, 1, spec.k)[0]
    noise = spec.noise_sd * rng.standard_normal(spec.n)

    x = np.sqrt(spec.alpha) * eps_x + np.sqrt(1.0 - spec.alpha) * (z @ cause_loadings.T)
    truth = GroundTruth(
        alpha=spec.alpha, weights=weights, cause_loadings=cause_loadings,
        latent_loadings=latent_loadings, noise_sd=spec.noise_sd,
        seed=spec.seed, latents=z, noise=noise,
    )
    y = truth.replay_target(x)

    ages = rng.uniform(20.0, 80.0, size=spec.n)
    sexes = rng.integers(0, 2, size=spec.n)
    feature_names = [f"vol_x{j + 1}" for j in range(spec.m)] + ["vol_y"]
    table = Table(
        ids=[f"{spec.dataset}_{i:05d}" for i in range(spec.n)],
        dataset_labels=[spec.dataset] * spec.n,
        ages=ages,
        sexes=sexes,
        features=np.column_stack([x, y]),
        feature_names=feature_names,
        diagnosis_labels=["control"] * spec.n,
    )
    return table, truth


@dataclass(frozen=True)
class MultiDatasetSpec:
    """Shifted/scaled Gaussian features for several named datasets."""

    n_per_dataset: int = 200
    shifts: tuple[float, ...] = (0.0, 0.0)
    scales: tuple[float, ...] | None = None  # defaults to all ones
    feature_names: tuple[str, ...] = ("vol_f1", "vol_f2", "thick_f1", "thick_f2")
    seed: int = 0

    def __post_init__(self):
        if len(self.shifts) < 2:
            raise ValueError("need at least 2 datasets")
        if self.scales is None:
            object.__setattr__(self, "scales", (1.0,) * len(self.shifts))
        if len(self.scales) != len(self.shifts):
            raise ValueError("scales and shifts must have the same length")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")

    @property
    def n_datasets(self) -> int:
        return len(self.shifts)


def gen_multidataset(spec: MultiDatasetSpec) -> Table:
    """Draw one table of several datasets with per-dataset feature shifts.

    All-zero shifts with unit scales make the datasets exchangeable,
    so a membership classifier can do no better than chance.  Age and
    sex are drawn identically for every dataset.
    """
    parts = []
    for d in range(spec.n_datasets):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, d]))
        n = spec.n_per_dataset
        features = spec.shifts[d] + spec.scales[d] * rng.standard_normal(
            (n, len(spec.feature_names)))
        parts.append(Table(
            ids=[f"ds{d:02d}_{i:05d}" for i in range(n)],
            dataset_labels=[f"ds{d:02d}"] * n,
            ages=rng.uniform(20.0, 80.0, size=n),
            sexes=rng.integers(0, 2, size=n),
            features=features,
            feature_names=spec.feature_names,
            diagnosis_labels=["control"] * n,
        ))
    return concat_tables(parts)


def write_table_csv(table: Table, path) -> None:
    """Write a table in the standard ingestion schema.

    Floats are written with full round-trip precision so a reloaded
    table is bit-identical.
    """
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["subject_id", "dataset", "age", "sex"]
        if table.diagnosis_labels is not None:
            header.append("diagnosis")
        header.extend(table.feature_names)
        writer.writerow(header)
        for i in range(table.n_rows):
            row = [table.ids[i], table.dataset_labels[i],
                   repr(float(table.ages[i])), str(int(table.sexes[i]))]
            if table.diagnosis_labels is not None:
                row.append(table.diagnosis_labels[i])
            row.extend(repr(float(v)) for v in table.features[i])
            writer.writerow(row)
