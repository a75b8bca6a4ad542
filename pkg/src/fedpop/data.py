"""Synthetic/CSV datasets and IID or Dirichlet label-skew client partitions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "PartitionSpec",
    "ClientShard",
    "EmptyShard",
    "ParseError",
    "NonNumericFeature",
    "generate_synthetic",
    "partition",
    "load_csv",
    "label_histogram",
    "write_manifest",
]


class EmptyShard(ValueError):
    """A client split came out empty; use more examples or fewer clients."""


class ParseError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class NonNumericFeature(ValueError):
    def __init__(self, column: str):
        super().__init__(f"feature column {column!r} is not numeric")
        self.column = column


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # Row positions in the source dataset, kept for partition manifests.
    indices: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} do not align")
        if len(y) == 0:
            raise ValueError("empty dataset")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        idx = np.arange(len(y)) if self.indices is None else np.asarray(self.indices, dtype=np.int64)
        x.setflags(write=False)
        y.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.num_classes, self.indices[rows])


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    num_clients: int = 10
    concentration: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self) -> None:
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        if self.scheme not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.concentration <= 0:
            raise ValueError("concentration must be > 0")
        if len(self.split_fractions) != 3 or min(self.split_fractions) <= 0:
            raise ValueError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")


@dataclass(frozen=True)
class ClientShard:
    train: Dataset
    val: Dataset
    test: Dataset


def generate_synthetic(
    num_examples: int,
    num_features: int,
    num_classes: int,
    class_separation: float,
    rng: np.random.Generator,
) -> Dataset:
    """Unit-variance Gaussian clusters, one per class.

    Class means are ``class_separation`` times orthonormal directions (random
    unit directions once ``num_classes > num_features``), so every mean sits
    at distance ``class_separation`` from the origin.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if num_classes <= num_features:
        q, _ = np.linalg.qr(rng.standard_normal((num_features, num_classes)))
        directions = q.T
    else:
        directions = rng.standard_normal((num_classes, num_features))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = class_separation * directions
    labels = rng.permutation(np.arange(num_examples) % num_classes)
    features = means[labels] + rng.standard_normal((num_examples, num_features))
    return Dataset(features, labels, num_classes)


def _split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_val = int(math.floor(n * fractions[1] + 0.5))
    n_test = int(math.floor(n * fractions[2] + 0.5))
    return n - n_val - n_test, n_val, n_test


def partition(data: Dataset, spec: PartitionSpec, rng: np.random.Generator) -> list[ClientShard]:
    """Split ``data`` into per-client train/val/test shards."""
    n, k = len(data), spec.num_clients
    if spec.scheme == "iid":
        order = rng.permutation(n)
        pools = np.array_split(order, k)
    else:
        buckets: list[list[np.ndarray]] = [[] for _ in range(k)]
        alpha = np.full(k, spec.concentration)
        for c in range(data.num_classes):
            members = rng.permutation(np.flatnonzero(data.labels == c))
            if len(members) == 0:
                continue
            p = rng.dirichlet(alpha)
            counts = rng.multinomial(len(members), p)
            for client, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
                buckets[client].append(chunk)
        pools = [np.concatenate(b) if b else np.empty(0, dtype=np.int64) for b in buckets]

    shards = []
    for client, pool in enumerate(pools):
        pool = rng.permutation(pool)
        n_train, n_val, n_test = _split_counts(len(pool), spec.split_fractions)
        if min(n_train, n_val, n_test) <= 0:
            raise EmptyShard(
                f"client {client} has {len(pool)} examples; split "
                f"({n_train}, {n_val}, {n_test}) leaves an empty part"
            )
        shards.append(
            ClientShard(
                train=data.subset(pool[:n_train]),
                val=data.subset(pool[n_train:n_train + n_val]),
                test=data.subset(pool[n_train + n_val:]),
            )
        )
    return shards


def label_histogram(data: Dataset) -> np.ndarray:
    return np.bincount(data.labels, minlength=data.num_classes)


def write_manifest(shards: Sequence[ClientShard], path: str | Path) -> None:
    """JSON audit manifest: client id -> example indices per split."""
    doc = {
        str(i): {
            "train": s.train.indices.tolist(),
            "val": s.val.indices.tolist(),
            "test": s.test.indices.tolist(),
        }
        for i, s in enumerate(shards)
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def _to_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Read a comma-separated file with a header row.

    Features are standardized per column (std floored at 1e-12); labels are
    mapped to ``0..C-1`` in order of first appearance. Rows are counted from
    1, excluding the header.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if label_column not in header:
            raise ParseError(f"{path}: no column named {label_column!r}")
        rows = [r for r in reader if r]
    if not rows:
        raise ParseError(f"{path}: no data rows")

    label_pos = header.index(label_column)
    feat_pos = [i for i in range(len(header)) if i != label_pos]
    for row_no, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}", row=row_no
            )

    x = np.empty((len(rows), len(feat_pos)))
    for j, col in enumerate(feat_pos):
        parsed = [_to_float(r[col]) for r in rows]
        if all(v is None for v in parsed):
            raise NonNumericFeature(header[col])
        for row_no, v in enumerate(parsed, start=1):
            if v is None:
                raise ParseError(
                    f"{path}: row {row_no}, column {header[col]!r}: "
                    f"cannot parse {rows[row_no - 1][col]!r} as a number",
                    row=row_no,
                    column=header[col],
                )
            x[row_no - 1, j] = v

    mapping: dict[str, int] = {}
    labels = np.array([mapping.setdefault(r[label_pos].strip(), len(mapping)) for r in rows])
    if len(mapping) < 2:
        raise ParseError(f"{path}: label column {label_column!r} has fewer than 2 classes")
    x = (x - x.mean(axis=0)) / np.maximum(x.std(axis=0), 1e-12)
    return Dataset(x, labels, len(mapping))
