"""Feature grouping for the passive party's columns.

The passive party partitions its columns into ``k`` expert-defined base
groups and, when interactions are enabled, adds one interaction group per
unordered pair of base groups (the concatenation of the two parents),
giving ``g = k + k(k-1)/2`` groups in total.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from fedada.nn import EmbeddingTable


class GroupingError(Exception):
    pass


@dataclass(frozen=True)
class FeatureGroupSpec:
    """Immutable partition of the passive party's columns into groups."""

    base_groups: tuple[tuple[str, tuple[str, ...]], ...]
    interactions_enabled: bool = True

    @property
    def k(self) -> int:
        return len(self.base_groups)

    @property
    def z(self) -> int:
        return self.k * (self.k - 1) // 2 if self.interactions_enabled else 0

    @property
    def g(self) -> int:
        return self.k + self.z

    @property
    def columns(self) -> tuple[str, ...]:
        cols: list[str] = []
        for _, group_cols in self.base_groups:
            cols.extend(group_cols)
        return tuple(cols)

    def all_groups(self) -> list[tuple[str, tuple[str, ...]]]:
        """Base groups followed by interaction groups in (i, j), i<j order."""
        groups = list(self.base_groups)
        if self.interactions_enabled:
            for (name_i, cols_i), (name_j, cols_j) in combinations(self.base_groups, 2):
                groups.append((f"{name_i}-{name_j}", cols_i + cols_j))
        return groups

    @property
    def group_names(self) -> list[str]:
        return [name for name, _ in self.all_groups()]


def build_spec(
    column_groups: dict[str, list[str]],
    interactions_enabled: bool = True,
    all_columns: list[str] | None = None,
) -> FeatureGroupSpec:
    """Validate a named column partition and derive the full group list."""
    if not column_groups:
        raise GroupingError("at least one feature group is required")
    seen: set[str] = set()
    base = []
    for name, cols in column_groups.items():
        if not cols:
            raise GroupingError(f"feature group {name!r} is empty")
        overlap = seen.intersection(cols)
        if overlap:
            raise GroupingError(f"columns {sorted(overlap)} appear in more than one group")
        seen.update(cols)
        base.append((name, tuple(cols)))
    if all_columns is not None:
        missing = set(all_columns) - seen
        extra = seen - set(all_columns)
        if missing:
            raise GroupingError(f"columns not assigned to any group: {sorted(missing)}")
        if extra:
            raise GroupingError(f"grouped columns not in the dataset: {sorted(extra)}")
    return FeatureGroupSpec(tuple(base), interactions_enabled)


@dataclass
class GroupedBatch:
    """Per-group input matrices sharing one batch dimension."""

    names: list[str]
    groups: list[np.ndarray]  # each (batch, group_input_dim)

    def __post_init__(self):
        sizes = {arr.shape[0] for arr in self.groups}
        if len(sizes) > 1:
            raise GroupingError(f"groups disagree on batch size: {sorted(sizes)}")

    @property
    def batch_size(self) -> int:
        return self.groups[0].shape[0] if self.groups else 0

    @property
    def g(self) -> int:
        return len(self.groups)

    def dims(self) -> list[int]:
        return [arr.shape[1] for arr in self.groups]


def column_width(col: str, embeddings: EmbeddingTable | None) -> int:
    if embeddings is not None and col in embeddings.tables:
        return embeddings.dim(col)
    return 1


def group_input_dims(spec: FeatureGroupSpec, embeddings: EmbeddingTable | None = None) -> list[int]:
    """Input width of every group after embeddings are applied."""
    return [
        sum(column_width(c, embeddings) for c in cols) for _, cols in spec.all_groups()
    ]


def assemble(
    columns: dict[str, np.ndarray],
    spec: FeatureGroupSpec,
    embeddings: EmbeddingTable | None = None,
) -> GroupedBatch:
    """Build per-group input matrices from named column arrays.

    Columns present in the embedding table are treated as categorical index
    arrays and replaced by their embedding vectors; every other column is a
    numeric feature contributing one dimension.
    """
    blocks: dict[str, np.ndarray] = {}
    for _, cols in spec.base_groups:
        for col in cols:
            if col in blocks:
                continue
            if col not in columns:
                raise GroupingError(f"missing column {col!r} in the batch")
            values = np.asarray(columns[col])
            if embeddings is not None and col in embeddings.tables:
                blocks[col] = embeddings.lookup(col, values.astype(int))
            else:
                blocks[col] = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    names, groups = [], []
    for name, cols in spec.all_groups():
        names.append(name)
        groups.append(np.concatenate([blocks[c] for c in cols], axis=1))
    return GroupedBatch(names, groups)
