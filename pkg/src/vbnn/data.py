"""CSV loading, column schemas, normalization, splits and synthetic data.

A dataset is a plain CSV with a header row.  The sidecar schema describes
each column: its kind (numeric feature, binary categorical feature, or the
single label column) and the normalization to apply (none, zscore, or
minmax01).  Normalization statistics are fitted once on training data and
carried inside the schema, so held-out data is transformed with the training
statistics rather than its own.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .metrics import TrueFunction
from .model import LabeledBatch, NetworkParams, sigmoid

__all__ = [
    "SchemaError",
    "DataError",
    "ColumnSchema",
    "TableSchema",
    "SplitSpec",
    "default_schema",
    "load_csv",
    "write_csv",
    "fit_normalization",
    "normalize",
    "denormalize",
    "minmax_out_of_range_count",
    "split",
    "batch_take",
    "generate_synthetic",
    "REFERENCE_TRUTH",
]

logger = logging.getLogger("vbnn")

_KINDS = ("numeric", "categorical_binary", "label")
_NORMALIZATIONS = ("none", "zscore", "minmax01")


class SchemaError(ValueError):
    """The schema is inconsistent, or the data violates it."""


class DataError(ValueError):
    """Rows of the file could not be parsed; carries the offending line numbers."""

    def __init__(self, message: str, lines=()):
        super().__init__(message)
        self.lines = tuple(lines)


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = "numeric"
    normalization: str = "none"
    mean: float | None = None
    sd: float | None = None
    min: float | None = None
    max: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.normalization not in _NORMALIZATIONS:
            raise SchemaError(f"unknown normalization {self.normalization!r}")
        if self.kind in ("label", "categorical_binary") and self.normalization != "none":
            raise SchemaError(f"column {self.name!r}: {self.kind} columns are never normalized")

    @property
    def fitted(self) -> bool:
        if self.normalization == "zscore":
            return self.mean is not None and self.sd is not None
        if self.normalization == "minmax01":
            return self.min is not None and self.max is not None
        return True

    def to_json_dict(self) -> dict:
        doc: dict = {"name": self.name, "kind": self.kind, "normalization": self.normalization}
        for key in ("mean", "sd", "min", "max"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ColumnSchema":
        return cls(
            name=str(doc["name"]),
            kind=doc.get("kind", "numeric"),
            normalization=doc.get("normalization", "none"),
            mean=doc.get("mean"),
            sd=doc.get("sd"),
            min=doc.get("min"),
            max=doc.get("max"),
        )


@dataclass(frozen=True)
class TableSchema:
    """Ordered column descriptions with exactly one label column."""

    columns: tuple

    def __post_init__(self) -> None:
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        labels = [c for c in cols if c.kind == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")

    @property
    def label_index(self) -> int:
        return next(i for i, c in enumerate(self.columns) if c.kind == "label")

    @property
    def feature_columns(self) -> tuple:
        return tuple(c for c in self.columns if c.kind != "label")

    @property
    def p(self) -> int:
        return len(self.feature_columns)

    @property
    def fitted(self) -> bool:
        return all(c.fitted for c in self.feature_columns)

    def to_json_dict(self) -> dict:
        return {"columns": [c.to_json_dict() for c in self.columns]}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TableSchema":
        return cls(columns=tuple(ColumnSchema.from_json_dict(c) for c in doc["columns"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TableSchema":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def default_schema(p: int, feature_names=None, label_name: str = "y") -> TableSchema:
    """Unnormalized numeric features x1..xp followed by a binary label."""
    names = feature_names or [f"x{i + 1}" for i in range(p)]
    cols = [ColumnSchema(name=n) for n in names]
    cols.append(ColumnSchema(name=label_name, kind="label"))
    return TableSchema(columns=tuple(cols))


def load_csv(path, schema: TableSchema | None = None) -> tuple[LabeledBatch, TableSchema]:
    """Parse a headered CSV into a batch, validating against the schema.

    Unparseable or missing values raise DataError listing the file line
    numbers (1-based, header is line 1).  Without a schema, every column is
    an unnormalized numeric feature except the label, which is the column
    named 'y' or 'label' (or the last column when neither name appears).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row")
        rows = list(reader)

    header = [h.strip() for h in header]
    if schema is None:
        if "y" in header:
            label = header.index("y")
        elif "label" in header:
            label = header.index("label")
        else:
            label = len(header) - 1
        cols = [
            ColumnSchema(name=h, kind="label" if i == label else "numeric")
            for i, h in enumerate(header)
        ]
        schema = TableSchema(columns=tuple(cols))
    else:
        expected = [c.name for c in schema.columns]
        if header != expected:
            raise SchemaError(
                f"{path}: header {header} does not match schema columns {expected}"
            )

    ncol = len(schema.columns)
    values = np.empty((len(rows), ncol))
    bad_lines = []
    for i, row in enumerate(rows):
        line_no = i + 2  # header is line 1
        if len(row) != ncol:
            bad_lines.append(line_no)
            continue
        try:
            values[i] = [float(cell) for cell in row]
        except ValueError:
            bad_lines.append(line_no)
    if bad_lines:
        raise DataError(
            f"{path}: malformed or missing values at line(s) "
            + ", ".join(str(b) for b in bad_lines),
            lines=bad_lines,
        )

    label_idx = schema.label_index
    y = values[:, label_idx]
    feature_idx = [i for i in range(ncol) if i != label_idx]
    x = values[:, feature_idx]

    if len(rows) and not np.all(np.isin(y, (0.0, 1.0))):
        raise SchemaError(f"{path}: label column must contain only 0/1 values")
    for j, col in enumerate(schema.feature_columns):
        if col.kind == "categorical_binary" and len(rows):
            if not np.all(np.isin(x[:, j], (0.0, 1.0))):
                raise SchemaError(f"{path}: categorical column {col.name!r} must be 0/1")

    return LabeledBatch(x=x, y=y.astype(np.int64)), schema


def write_csv(batch: LabeledBatch, path, schema: TableSchema | None = None) -> None:
    """Write a batch back to CSV (full float precision) in schema column order."""
    schema = schema or default_schema(batch.p)
    if schema.p != batch.p:
        raise SchemaError("schema width does not match batch width")
    label_idx = schema.label_index
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in schema.columns])
        for i in range(batch.n):
            row, j = [], 0
            for idx in range(len(schema.columns)):
                if idx == label_idx:
                    row.append(int(batch.y[i]))
                else:
                    row.append(repr(float(batch.x[i, j])))
                    j += 1
            writer.writerow(row)


def fit_normalization(schema: TableSchema, batch: LabeledBatch) -> TableSchema:
    """Fill normalization statistics from this batch (training data only)."""
    if schema.p != batch.p:
        raise SchemaError("schema width does not match batch width")
    cols = list(schema.columns)
    j = 0
    for idx, col in enumerate(cols):
        if col.kind == "label":
            continue
        values = batch.x[:, j]
        if col.normalization == "zscore":
            sd = float(values.std())
            if sd == 0.0:
                raise SchemaError(f"column {col.name!r} has zero variance, cannot zscore")
            cols[idx] = replace(col, mean=float(values.mean()), sd=sd)
        elif col.normalization == "minmax01":
            lo, hi = float(values.min()), float(values.max())
            if hi <= lo:
                raise SchemaError(f"column {col.name!r} is constant, cannot minmax scale")
            cols[idx] = replace(col, min=lo, max=hi)
        j += 1
    return TableSchema(columns=tuple(cols))


def normalize(batch: LabeledBatch, schema: TableSchema) -> LabeledBatch:
    """Apply the fitted per-column transforms; logs a warning when minmax01
    values fall outside the fitted range (they map outside [0,1])."""
    if not schema.fitted:
        raise SchemaError("schema is not fitted; call fit_normalization first")
    if schema.p != batch.p:
        raise SchemaError("schema width does not match batch width")
    x = batch.x.copy()
    outside = 0
    for j, col in enumerate(schema.feature_columns):
        if col.normalization == "zscore":
            x[:, j] = (x[:, j] - col.mean) / col.sd
        elif col.normalization == "minmax01":
            outside += int(np.sum((x[:, j] < col.min) | (x[:, j] > col.max)))
            x[:, j] = (x[:, j] - col.min) / (col.max - col.min)
    if outside:
        logger.warning(
            "%d value(s) fell outside the fitted minmax range and map outside [0,1]",
            outside,
        )
    return LabeledBatch(x=x, y=batch.y)


def minmax_out_of_range_count(batch: LabeledBatch, schema: TableSchema) -> int:
    """How many raw cells a minmax01 transform would push outside [0,1]."""
    count = 0
    for j, col in enumerate(schema.feature_columns):
        if col.normalization == "minmax01" and col.fitted:
            count += int(np.sum((batch.x[:, j] < col.min) | (batch.x[:, j] > col.max)))
    return count


def denormalize(batch: LabeledBatch, schema: TableSchema) -> LabeledBatch:
    """Inverse of :func:`normalize` (round-trips to ~1e-12 relative error)."""
    if not schema.fitted:
        raise SchemaError("schema is not fitted")
    x = batch.x.copy()
    for j, col in enumerate(schema.feature_columns):
        if col.normalization == "zscore":
            x[:, j] = x[:, j] * col.sd + col.mean
        elif col.normalization == "minmax01":
            x[:, j] = x[:, j] * (col.max - col.min) + col.min
    return LabeledBatch(x=x, y=batch.y)


@dataclass(frozen=True)
class SplitSpec:
    """Holdout (train_fraction) or k-fold cross-validation splits."""

    kind: str = "holdout"
    train_fraction: float = 0.7
    folds: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("holdout", "kfold"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.kind == "holdout" and not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.kind == "kfold" and self.folds < 2:
            raise ValueError("kfold needs at least 2 folds")


def batch_take(batch: LabeledBatch, idx: np.ndarray) -> LabeledBatch:
    return LabeledBatch(x=batch.x[idx], y=batch.y[idx])


def split(batch: LabeledBatch, spec: SplitSpec) -> list[tuple[LabeledBatch, LabeledBatch]]:
    """Deterministic, seeded splits.

    Holdout returns one (train, test) pair with round(train_fraction * n)
    training rows.  K-fold returns one pair per fold; fold sizes differ by at
    most one row, every row appears in exactly one test fold.
    """
    n = batch.n
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n) if spec.shuffle else np.arange(n)
    if spec.kind == "holdout":
        n_train = int(np.rint(spec.train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        return [(batch_take(batch, perm[:n_train]), batch_take(batch, perm[n_train:]))]
    if spec.folds > n:
        raise ValueError("more folds than rows")
    parts = np.array_split(perm, spec.folds)
    pairs = []
    for i, test_idx in enumerate(parts):
        train_idx = np.concatenate([parts[j] for j in range(spec.folds) if j != i])
        pairs.append((batch_take(batch, train_idx), batch_take(batch, test_idx)))
    return pairs


def generate_synthetic(truth: TrueFunction, n: int, seed) -> LabeledBatch:
    """Draw x ~ U[0,1]^p and y ~ Bernoulli(sigmoid(eta0(x))), fully seeded.

    The generator makes exactly two draws (features, then label uniforms),
    so a given (truth, n, seed) always produces byte-identical data.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    x = rng.random((n, truth.p))
    probs = sigmoid(truth(x))
    y = (rng.random(n) < probs).astype(np.int64)
    return LabeledBatch(x=x, y=y)


# Reference synthetic truth used by the experiment scripts and tests: a p=2,
# k=3 network whose decision surface is XOR-like along the two axes with a
# soft diagonal gate, giving roughly balanced labels and a Bayes risk well
# away from both 0 and 0.5.
REFERENCE_TRUTH = TrueFunction.from_network(
    NetworkParams(
        beta0=-3.0,
        beta=np.array([4.0, 4.0, -6.0]),
        gamma0=np.array([-3.0, -3.0, 4.5]),
        gamma=np.array([[6.0, 0.0], [0.0, 6.0], [-6.0, -6.0]]),
    )
)
