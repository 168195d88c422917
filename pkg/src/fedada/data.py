"""Tabular dataset handling: CSV ingestion, domain splits, positive-label
subsampling and a synthetic covariate-shift generator.

Datasets are column stores with a declared schema; every column is assigned
to one party ("active" for A/B, "passiveC" for C) so party views can be cut
without copying rows.  Splits are index-based: the alignment indices are the
shared row ids all parties use to stay in sync.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

ACTIVE = "active"
PASSIVE_C = "passiveC"


class DataError(Exception):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    party: str  # ACTIVE | PASSIVE_C
    vocab: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.party not in (ACTIVE, PASSIVE_C):
            raise DataError(f"unknown party {self.party!r}")
        if self.kind == "categorical" and not self.vocab:
            raise DataError(f"categorical column {self.name!r} needs a vocab")


@dataclass
class TabularDataset:
    schema: list[ColumnSpec]
    columns: dict[str, np.ndarray]
    labels: np.ndarray  # {0,1}
    label_column: str = "label"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        for spec in self.schema:
            if spec.name not in self.columns:
                raise DataError(f"schema column {spec.name!r} missing from data")
            if len(self.columns[spec.name]) != n:
                raise DataError(f"column {spec.name!r} length mismatch")
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise DataError(f"labels must be binary, found {sorted(bad)}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def party_columns(self, party: str) -> list[str]:
        return [spec.name for spec in self.schema if spec.party == party]

    def view(self, indices: np.ndarray, party: str) -> dict[str, np.ndarray]:
        """The named columns one party is allowed to see for these rows."""
        return {name: self.columns[name][indices] for name in self.party_columns(party)}


@dataclass
class DomainSplit:
    """Index sets for the source / target partitions of one dataset."""

    dataset: TabularDataset
    source: np.ndarray
    target_labeled: np.ndarray
    target_unlabeled: np.ndarray
    target_test: np.ndarray
    source_test: np.ndarray | None = None  # held-out source rows, if any

    def __post_init__(self):
        lab = set(self.target_labeled.tolist())
        unl = set(self.target_unlabeled.tolist())
        if lab & unl:
            raise DataError("labeled and unlabeled target rows overlap")

    def counts(self) -> dict[str, int]:
        return {
            "source": len(self.source),
            "target_labeled": len(self.target_labeled),
            "target_unlabeled": len(self.target_unlabeled),
            "target_test": len(self.target_test),
            "source_test": 0 if self.source_test is None else len(self.source_test),
        }


def load_csv(path: str, schema_config: dict) -> TabularDataset:
    """Load a headered CSV against a declared schema.

    ``schema_config`` is ``{"label": name, "columns": [{"name", "kind",
    "party", "vocab"?}, ...]}``.  Categoricals are indexed against their
    vocab; parse failures are reported with row and column.
    """
    schema = [
        ColumnSpec(
            name=c["name"],
            kind=c["kind"],
            party=c["party"],
            vocab=tuple(c["vocab"]) if c.get("vocab") else None,
        )
        for c in schema_config["columns"]
    ]
    label_column = schema_config.get("label", "label")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or [])
        for spec in schema:
            if spec.name not in header:
                raise DataError(f"unknown column: {spec.name!r} not in CSV header")
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in CSV header")
        raw_rows = list(reader)

    columns: dict[str, list] = {spec.name: [] for spec in schema}
    labels: list[int] = []
    vocab_index = {
        spec.name: {v: i for i, v in enumerate(spec.vocab)}
        for spec in schema
        if spec.kind == "categorical"
    }
    for row_no, row in enumerate(raw_rows):
        for spec in schema:
            cell = row[spec.name]
            if spec.kind == "numeric":
                try:
                    columns[spec.name].append(float(cell))
                except ValueError:
                    raise DataError(
                        f"unparseable cell at row {row_no}, column {spec.name!r}: {cell!r}"
                    ) from None
            else:
                idx = vocab_index[spec.name].get(cell)
                if idx is None:
                    raise DataError(
                        f"out-of-vocab category at row {row_no}, column {spec.name!r}: {cell!r}"
                    )
                columns[spec.name].append(idx)
        try:
            labels.append(int(row[label_column]))
        except ValueError:
            raise DataError(f"unparseable label at row {row_no}: {row[label_column]!r}") from None

    arrays = {
        spec.name: np.asarray(
            columns[spec.name], dtype=np.float64 if spec.kind == "numeric" else np.int64
        )
        for spec in schema
    }
    return TabularDataset(schema, arrays, np.asarray(labels, dtype=np.int64))


def save_csv(dataset: TabularDataset, path: str, schema_path: str | None = None) -> None:
    """Emit a dataset as CSV plus (optionally) its schema config as JSON."""
    names = [spec.name for spec in dataset.schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [dataset.label_column])
        for i in range(dataset.n):
            row = []
            for spec in dataset.schema:
                value = dataset.columns[spec.name][i]
                if spec.kind == "categorical":
                    row.append(spec.vocab[int(value)])
                else:
                    row.append(repr(float(value)))
            row.append(int(dataset.labels[i]))
            writer.writerow(row)
    if schema_path is not None:
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(schema_to_config(dataset), fh, indent=2)


def schema_to_config(dataset: TabularDataset) -> dict:
    return {
        "label": dataset.label_column,
        "columns": [
            {
                "name": s.name,
                "kind": s.kind,
                "party": s.party,
                **({"vocab": list(s.vocab)} if s.vocab else {}),
            }
            for s in dataset.schema
        ],
    }


def zscore_stats(dataset: TabularDataset, indices: np.ndarray) -> dict[str, tuple[float, float]]:
    """Mean/std of every numeric column over the given (training) rows."""
    stats = {}
    for spec in dataset.schema:
        if spec.kind == "numeric":
            values = dataset.columns[spec.name][indices]
            std = float(np.std(values))
            stats[spec.name] = (float(np.mean(values)), std if std > 0 else 1.0)
    return stats


def apply_zscore(dataset: TabularDataset, stats: dict[str, tuple[float, float]]) -> TabularDataset:
    columns = dict(dataset.columns)
    for name, (mean, std) in stats.items():
        columns[name] = (dataset.columns[name] - mean) / std
    return replace(dataset, columns=columns)


def split_domains(
    dataset: TabularDataset, split_config: dict, seed: int | None = None
) -> DomainSplit:
    """Partition rows into source and target domains.

    ``split_config`` names the splitting predicate and the requested sizes::

        {"column": "education", "target_values": ["masters", "phd"],
         "n_source": ..., "n_target_labeled": ..., "n_target_unlabeled": ...,
         "n_target_test": ..., "standardize": true}

    Preprocessing statistics (z-score) are computed on the source rows only
    and reused for every target view.
    """
    col = split_config["column"]
    if col not in dataset.columns:
        raise DataError(f"splitting column {col!r} not in dataset")
    spec = next(s for s in dataset.schema if s.name == col)
    target_values = split_config["target_values"]
    if spec.kind == "categorical":
        wanted = {spec.vocab.index(v) for v in target_values}
        mask = np.isin(dataset.columns[col], list(wanted))
    else:
        mask = np.isin(dataset.columns[col], target_values)
    target_pool = np.flatnonzero(mask)
    source_pool = np.flatnonzero(~mask)
    if len(target_pool) == 0:
        raise DataError("splitting predicate matches no rows")

    rng = np.random.default_rng(seed)
    n_src = split_config.get("n_source", len(source_pool))
    n_lab = split_config["n_target_labeled"]
    n_unl = split_config.get("n_target_unlabeled", 0)
    n_test = split_config.get("n_target_test", 0)
    if n_src > len(source_pool):
        raise DataError(f"requested {n_src} source rows, only {len(source_pool)} available")
    if n_lab + n_unl + n_test > len(target_pool):
        raise DataError("requested target sizes exceed available target rows")

    source = rng.choice(source_pool, size=n_src, replace=False)
    picked = rng.choice(target_pool, size=n_lab + n_unl + n_test, replace=False)
    split = DomainSplit(
        dataset=dataset,
        source=np.sort(source),
        target_labeled=np.sort(picked[:n_lab]),
        target_unlabeled=np.sort(picked[n_lab : n_lab + n_unl]),
        target_test=np.sort(picked[n_lab + n_unl :]),
    )
    if split_config.get("standardize", False):
        stats = zscore_stats(dataset, split.source)
        split.dataset = apply_zscore(dataset, stats)
    return split


def subsample_positives(
    split: DomainSplit, n_pos: int, seed: int | None = None, total: int | None = None
) -> DomainSplit:
    """Shrink the labeled target set to exactly ``n_pos`` positives.

    Negatives are retained to reach ``total`` rows (defaults to the current
    labeled-target size, capped by availability).
    """
    labels = split.dataset.labels[split.target_labeled]
    pos = split.target_labeled[labels == 1]
    neg = split.target_labeled[labels == 0]
    if n_pos > len(pos):
        raise DataError(f"requested {n_pos} positives, only {len(pos)} available")
    total = total if total is not None else len(split.target_labeled)
    n_neg = min(total - n_pos, len(neg))
    rng = np.random.default_rng(seed)
    keep_pos = rng.choice(pos, size=n_pos, replace=False)
    keep_neg = rng.choice(neg, size=n_neg, replace=False)
    labeled = np.sort(np.concatenate([keep_pos, keep_neg]))
    return replace(split, target_labeled=labeled)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic covariate-shift generator."""

    k: int = 3
    group_dim: int = 4
    m_active: int = 2
    n_source: int = 2000
    n_source_test: int = 0
    n_target_labeled: int = 400
    n_target_unlabeled: int = 800
    n_target_test: int = 1000
    shift: float = 1.5  # per-group mean shift magnitude (in latent sigmas)
    rotation_scale: float = 0.4  # rotation angle per unit shift
    anisotropy: float = 0.65  # per-dimension latent scale decay (1.0 = isotropic)
    shift_spread: float = 1.0  # 0 = every group shifted equally, 1 = ramp from clean to full
    label_noise: float = 0.0  # probability of flipping a label
    active_signal: float = 0.8  # weight of the active party's latent readout
    interaction_strength: float = 2.5  # cross-group product terms in the logit
    main_strength: float = 1.2  # per-group terms in the logit
    logit_scale: float = 1.6
    intercept: float = -0.3

    def __post_init__(self):
        if self.k < 1 or self.group_dim < 1 or self.m_active < 0:
            raise DataError("invalid synthetic dimensions")


def synth_group_map(config: SynthConfig) -> dict[str, list[str]]:
    """Column-to-group assignment matching the generated column names."""
    return {
        f"grp{i}": [f"c{i}_{j}" for j in range(config.group_dim)]
        for i in range(config.k)
    }


def synth_shift(config: SynthConfig, seed: int) -> tuple[TabularDataset, DomainSplit]:
    """Generate a labeled tabular dataset with a controlled covariate shift.

    Source rows expose the latent group features directly; target rows see
    the same latents through a per-group rotation plus mean shift of
    magnitude ``config.shift``.  Labels come from one fixed logistic ground
    truth on the latents (per-group tanh scores plus cross-group products),
    identical in both domains, so the shift is purely covariate.
    """
    rng = np.random.default_rng(seed)
    k, d = config.k, config.group_dim
    n_target = config.n_target_labeled + config.n_target_unlabeled + config.n_target_test
    n_src_all = config.n_source + config.n_source_test
    n_total = n_src_all + n_target

    # fixed ground truth for this dataset
    v = rng.normal(size=(k, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    group_coef = config.main_strength * rng.uniform(0.6, 1.4, size=k) * rng.choice([-1.0, 1.0], size=k)
    pair_coef = {}
    for i in range(k):
        for j in range(i + 1, k):
            pair_coef[(i, j)] = config.interaction_strength * rng.uniform(0.7, 1.3) * rng.choice([-1.0, 1.0])
    active_dirs = rng.normal(size=(config.m_active, k))
    active_dirs /= np.maximum(np.linalg.norm(active_dirs, axis=1, keepdims=True), 1e-12)

    # per-group target-domain transforms: rotation (via a skew generator) + shift.
    # shift_spread ramps the magnitude across groups so some groups stay clean
    # while others are heavily distorted.
    rotations = []
    shifts = []
    for i in range(k):
        ramp = i / (k - 1) if k > 1 else 1.0
        factor = (1.0 - config.shift_spread) + config.shift_spread * ramp
        magnitude = config.shift * factor
        a = rng.normal(size=(d, d))
        skew = (a - a.T) / 2.0
        norm = np.linalg.norm(skew) or 1.0
        rotations.append(expm(config.rotation_scale * magnitude * skew / norm))
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        shifts.append(magnitude * direction)

    scales = config.anisotropy ** np.arange(d)
    latent = rng.normal(size=(n_total, k, d)) * scales
    scores_per_group = np.tanh(np.einsum("nkd,kd->nk", latent, v) * np.sqrt(d) / 2.0)
    logit = config.intercept + scores_per_group @ group_coef
    for (i, j), coef in pair_coef.items():
        logit = logit + coef * scores_per_group[:, i] * scores_per_group[:, j]
    if config.m_active:
        active_vals = scores_per_group @ active_dirs.T + 0.6 * rng.normal(
            size=(n_total, config.m_active)
        )
        logit = logit + config.active_signal * active_vals.mean(axis=1)
    else:
        active_vals = np.zeros((n_total, 0))
    prob = 1.0 / (1.0 + np.exp(-config.logit_scale * logit))
    labels = (rng.random(n_total) < prob).astype(np.int64)
    if config.label_noise > 0:
        flip = rng.random(n_total) < config.label_noise
        labels = np.where(flip, 1 - labels, labels)

    is_target = np.zeros(n_total, dtype=bool)
    is_target[n_src_all:] = True
    observed = latent.copy()
    for i in range(k):
        observed[is_target, i, :] = latent[is_target, i, :] @ rotations[i] + shifts[i]

    schema: list[ColumnSpec] = []
    columns: dict[str, np.ndarray] = {}
    for a in range(config.m_active):
        name = f"a{a}"
        schema.append(ColumnSpec(name, "numeric", ACTIVE))
        columns[name] = active_vals[:, a]
    for i in range(k):
        for j in range(d):
            name = f"c{i}_{j}"
            schema.append(ColumnSpec(name, "numeric", PASSIVE_C))
            columns[name] = observed[:, i, j]

    dataset = TabularDataset(
        schema,
        columns,
        labels,
        meta={"group_map": synth_group_map(config), "config": config.__dict__.copy()},
    )
    target_idx = np.arange(n_src_all, n_total)
    split = DomainSplit(
        dataset=dataset,
        source=np.arange(config.n_source),
        target_labeled=target_idx[: config.n_target_labeled],
        target_unlabeled=target_idx[
            config.n_target_labeled : config.n_target_labeled + config.n_target_unlabeled
        ],
        target_test=target_idx[config.n_target_labeled + config.n_target_unlabeled :],
        source_test=np.arange(config.n_source, n_src_all),
    )
    return dataset, split
