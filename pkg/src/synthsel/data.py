"""Tabular datasets: schema, CSV ingestion, z-score standardization and moments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml


class DataError(ValueError):
    """Raised for malformed schemas, CSV files or datasets."""


class ConstantColumnError(DataError):
    """A continuous column has zero variance and cannot be standardized."""

    def __init__(self, name: str):
        super().__init__(f"constant continuous column {name!r} cannot be standardized")
        self.column = name


@dataclass(frozen=True)
class ColumnKind:
    """Continuous (cardinality None) or categorical with ``cardinality`` levels."""

    cardinality: int | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.cardinality is not None and self.cardinality < 2:
            raise DataError(f"categorical cardinality must be >= 2, got {self.cardinality}")
        if self.labels is not None:
            if self.cardinality is None:
                raise DataError("labels given for a continuous column")
            if len(set(self.labels)) != self.cardinality:
                raise DataError("number of distinct labels must equal cardinality")
            # codes follow lexicographic label order
            object.__setattr__(self, "labels", tuple(sorted(self.labels)))

    @classmethod
    def continuous(cls) -> "ColumnKind":
        return cls()

    @classmethod
    def categorical(cls, cardinality: int, labels: Sequence[str] | None = None) -> "ColumnKind":
        return cls(int(cardinality), None if labels is None else tuple(str(x) for x in labels))

    @property
    def is_categorical(self) -> bool:
        return self.cardinality is not None

    def code_labels(self) -> tuple[str, ...]:
        if self.labels is not None:
            return self.labels
        return tuple(sorted(str(i) for i in range(self.cardinality)))


@dataclass(frozen=True)
class Schema:
    names: tuple[str, ...]
    kinds: tuple[ColumnKind, ...]
    response_index: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(self.names) != len(self.kinds):
            raise DataError("names and kinds differ in length")
        if len(set(self.names)) != len(self.names):
            raise DataError("column names must be unique")
        if not 0 <= self.response_index < len(self.names):
            raise DataError(f"response_index {self.response_index} out of range")

    @property
    def n_columns(self) -> int:
        return len(self.names)

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if not k.is_categorical]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k.is_categorical]

    @property
    def feature_indices(self) -> list[int]:
        return [i for i in range(self.n_columns) if i != self.response_index]

    @property
    def response_kind(self) -> ColumnKind:
        return self.kinds[self.response_index]

    @classmethod
    def all_continuous(cls, n_features: int, response: str = "y", binary_response: bool = False) -> "Schema":
        """Schema ``x1..xp`` plus a trailing response column."""
        names = tuple(f"x{j + 1}" for j in range(n_features)) + (response,)
        kinds = (ColumnKind.continuous(),) * n_features + (
            ColumnKind.categorical(2) if binary_response else ColumnKind.continuous(),
        )
        return cls(names, kinds, n_features)

    def to_dict(self) -> dict:
        cols = []
        for i, (name, kind) in enumerate(zip(self.names, self.kinds)):
            entry: dict = {"name": name, "kind": "categorical" if kind.is_categorical else "continuous"}
            if kind.is_categorical:
                entry["cardinality"] = kind.cardinality
                if kind.labels is not None:
                    entry["labels"] = list(kind.labels)
            if i == self.response_index:
                entry["response"] = True
            cols.append(entry)
        return {"columns": cols}

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        if not isinstance(doc, dict) or "columns" not in doc:
            raise DataError("schema document needs a 'columns' list")
        names, kinds, response = [], [], []
        for i, col in enumerate(doc["columns"]):
            unknown = set(col) - {"name", "kind", "cardinality", "labels", "response"}
            if unknown:
                raise DataError(f"schema column {i}: unknown keys {sorted(unknown)}")
            names.append(str(col["name"]))
            kind = col.get("kind", "continuous")
            if kind == "continuous":
                kinds.append(ColumnKind.continuous())
            elif kind == "categorical":
                labels = col.get("labels")
                card = col.get("cardinality", len(labels) if labels else None)
                if card is None:
                    raise DataError(f"schema column {col['name']!r}: categorical needs cardinality")
                kinds.append(ColumnKind.categorical(card, labels))
            else:
                raise DataError(f"schema column {col['name']!r}: unknown kind {kind!r}")
            if col.get("response", False):
                response.append(i)
        if len(response) != 1:
            raise DataError("schema must flag exactly one response column")
        return cls(tuple(names), tuple(kinds), response[0])


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    if not path.exists():
        raise DataError(f"schema file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(yaml.safe_load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x m`` value matrix under a :class:`Schema`.

    Categorical cells hold integer codes stored as floats. The matrix is
    made read-only on construction.
    """

    schema: Schema
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[1] != self.schema.n_columns:
            raise DataError(
                f"values must be n x {self.schema.n_columns}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {r}, column {self.schema.names[c]!r}")
        for j in self.schema.categorical_indices:
            col = values[:, j]
            card = self.schema.kinds[j].cardinality
            if np.any(col != np.round(col)) or np.any(col < 0) or np.any(col >= card):
                raise DataError(
                    f"column {self.schema.names[j]!r}: categorical codes must be integers in [0, {card})"
                )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def X(self) -> np.ndarray:
        return self.values[:, self.schema.feature_indices]

    @property
    def y(self) -> np.ndarray:
        return self.values[:, self.schema.response_index]

    @property
    def p(self) -> int:
        return self.schema.n_columns - 1

    def take(self, rows) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(rows)])

    def equals(self, other: "Dataset") -> bool:
        return self.schema == other.schema and np.array_equal(self.values, other.values)

    @classmethod
    def from_xy(cls, X: np.ndarray, y: np.ndarray, binary_response: bool = False) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        schema = Schema.all_continuous(X.shape[1], binary_response=binary_response)
        return cls(schema, np.hstack([X, y]))


@dataclass(frozen=True)
class StandardizationStats:
    """Mean and standard deviation for each continuous column, keyed by column index."""

    columns: tuple[int, ...]
    mean: tuple[float, ...]
    sd: tuple[float, ...]
    n_columns: int = field(default=0)

    def __post_init__(self):
        if not (len(self.columns) == len(self.mean) == len(self.sd)):
            raise DataError("stats vectors differ in length")
        if any(not s > 0 for s in self.sd):
            raise DataError("standard deviations must be strictly positive")


def standardize(d: Dataset) -> tuple[Dataset, StandardizationStats]:
    if d.n < 2:
        raise DataError("standardize needs at least 2 rows")
    cols = d.schema.continuous_indices
    values = d.values.copy()
    means, sds = [], []
    for j in cols:
        col = values[:, j]
        mu = float(col.mean())
        sd = float(col.std(ddof=1))
        # relative test so large-offset constant columns are caught too
        if sd <= 1e-12 * max(1.0, abs(mu)):
            raise ConstantColumnError(d.schema.names[j])
        values[:, j] = (col - mu) / sd
        means.append(mu)
        sds.append(sd)
    stats = StandardizationStats(tuple(cols), tuple(means), tuple(sds), d.schema.n_columns)
    return Dataset(d.schema, values), stats


def destandardize(d: Dataset, s: StandardizationStats) -> Dataset:
    cols = d.schema.continuous_indices
    if tuple(cols) != tuple(s.columns) or (s.n_columns and s.n_columns != d.schema.n_columns):
        raise DataError(
            f"stats cover columns {list(s.columns)} but dataset has continuous columns {cols}"
        )
    values = d.values.copy()
    for j, mu, sd in zip(s.columns, s.mean, s.sd):
        values[:, j] = values[:, j] * sd + mu
    return Dataset(d.schema, values)


def empirical_moments(d: Dataset, cols: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance over ``cols`` (default: all continuous columns).

    Binary categorical columns are accepted and treated as 0/1 numeric.
    """
    if cols is None:
        cols = [j for j, k in enumerate(d.schema.kinds) if not k.is_categorical or k.cardinality == 2]
    cols = list(cols)
    if not cols:
        raise DataError("no columns selected for moments")
    for j in cols:
        kind = d.schema.kinds[j]
        if kind.is_categorical and kind.cardinality != 2:
            raise DataError(f"column {d.schema.names[j]!r} is categorical")
    if d.n < 2:
        raise DataError("moments need at least 2 rows")
    Z = d.values[:, cols]
    mean = Z.mean(axis=0)
    centered = Z - mean
    cov = centered.T @ centered / (d.n - 1)
    return mean, (cov + cov.T) / 2


def _parse_cell(text: str, kind: ColumnKind, row: int, name: str) -> float:
    text = text.strip()
    if kind.is_categorical:
        labels = kind.code_labels()
        try:
            return float(labels.index(text))
        except ValueError:
            raise DataError(
                f"row {row}, column {name!r}: label {text!r} not in declared set {list(labels)}"
            ) from None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {name!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {name!r}: non-finite value {text!r}")
    return value


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a comma-separated file whose header matches ``schema.names``.

    Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file: no header row") from None
        if tuple(header) != schema.names:
            raise DataError(f"header {header} does not match schema columns {list(schema.names)}")
        rows = []
        for i, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != schema.n_columns:
                raise DataError(f"row {i}: expected {schema.n_columns} fields, got {len(record)}")
            rows.append([
                _parse_cell(cell, kind, i, name)
                for cell, kind, name in zip(record, schema.kinds, schema.names)
            ])
    if not rows:
        raise DataError("empty dataset")
    return Dataset(schema, np.array(rows, dtype=np.float64))


def format_value(x: float) -> str:
    return f"{x:.10g}"


def write_csv(d: Dataset, path: str | Path) -> None:
    """Write ``d`` losslessly, categorical codes mapped back to labels."""
    kinds = d.schema.kinds
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.schema.names)
        for row in d.values:
            w.writerow([
                k.code_labels()[int(v)] if k.is_categorical else repr(float(v))
                for v, k in zip(row, kinds)
            ])
