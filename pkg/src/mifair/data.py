"""Tabular ingestion: schema, CSV loading, encoding, group mapping, splits and batches."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class SchemaError(ValueError):
    """The schema config is inconsistent."""


class DataError(ValueError):
    """A data file does not conform to its schema."""


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetSchema:
    features: tuple[Column, ...]
    label: str
    label_values: tuple[str, ...]
    sensitive: tuple[Column, ...]

    def __post_init__(self):
        if not self.sensitive:
            raise SchemaError("at least one sensitive column is required")
        if len(self.label_values) < 2:
            raise SchemaError("label needs at least two declared values")
        names = [c.name for c in self.features] + [c.name for c in self.sensitive]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique across features and sensitive columns")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} also appears as a feature or sensitive column")
        for col in self.features + self.sensitive:
            if col.kind not in (CATEGORICAL, CONTINUOUS):
                raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if col.kind == CATEGORICAL and len(col.categories) < 2:
                raise SchemaError(f"categorical column {col.name!r} needs at least two categories")
        for col in self.sensitive:
            if col.kind != CATEGORICAL:
                raise SchemaError(f"sensitive column {col.name!r} must be categorical")

    @property
    def sensitive_names(self) -> list[str]:
        return [c.name for c in self.sensitive]

    def sensitive_column(self, name: str) -> Column:
        for c in self.sensitive:
            if c.name == name:
                return c
        raise SchemaError(f"unknown sensitive attribute {name!r}; schema has {self.sensitive_names}")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        def col(spec, sensitive=False):
            kind = spec.get("kind", CATEGORICAL if sensitive else None)
            if kind is None:
                raise SchemaError(f"column {spec.get('name')!r} has no kind")
            return Column(spec["name"], kind, tuple(str(v) for v in spec.get("categories", ())))

        try:
            return cls(
                features=tuple(col(f) for f in d["features"]),
                label=d["label"],
                label_values=tuple(str(v) for v in d["label_values"]),
                sensitive=tuple(col(s, sensitive=True) for s in d["sensitive"]),
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing key {exc}") from None

    def to_dict(self) -> dict:
        def col(c: Column):
            out = {"name": c.name, "kind": c.kind}
            if c.categories:
                out["categories"] = list(c.categories)
            return out

        return {
            "features": [col(c) for c in self.features],
            "label": self.label,
            "label_values": list(self.label_values),
            "sensitive": [col(c) for c in self.sensitive],
        }

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# loading


@dataclass
class RawTable:
    """Typed columns: category strings for categorical columns, floats for continuous ones."""

    columns: dict[str, list]
    n_rows: int


def load_csv(path, schema: DatasetSchema) -> RawTable:
    cols = list(schema.features) + list(schema.sensitive)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        needed = [c.name for c in cols] + [schema.label]
        missing = [n for n in needed if n not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        pos = {n: header.index(n) for n in needed}
        allowed = {c.name: set(c.categories) for c in cols if c.kind == CATEGORICAL}
        labels = set(schema.label_values)
        out: dict[str, list] = {n: [] for n in needed}
        n = 0
        for row_idx, row in enumerate(reader):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_idx} has {len(row)} fields, header has {len(header)}")
            for c in cols:
                raw = row[pos[c.name]].strip()
                if c.kind == CONTINUOUS:
                    try:
                        val = float(raw)
                    except ValueError:
                        raise DataError(f"row {row_idx}, column {c.name!r}: cannot parse {raw!r} as a number") from None
                    if not math.isfinite(val):
                        raise DataError(f"row {row_idx}, column {c.name!r}: non-finite value {raw!r}")
                    out[c.name].append(val)
                else:
                    if raw not in allowed[c.name]:
                        raise DataError(f"row {row_idx}, column {c.name!r}: unknown category {raw!r}")
                    out[c.name].append(raw)
            lab = row[pos[schema.label]].strip()
            if lab not in labels:
                raise DataError(f"row {row_idx}, column {schema.label!r}: unknown label {lab!r}")
            out[schema.label].append(lab)
            n += 1
    return RawTable(out, n)


# ---------------------------------------------------------------------------
# group mapping


def map_to_group(indices: Sequence[int], cardinalities: Sequence[int]) -> int:
    """Row-major mixed-radix index of one category per attribute."""
    if len(indices) != len(cardinalities):
        raise ValueError("one index per attribute is required")
    g = 0
    for i, c in zip(indices, cardinalities):
        if not 0 <= i < c:
            raise IndexError(f"category index {i} outside [0, {c})")
        g = g * c + int(i)
    return g


def unmap_group(group: int, cardinalities: Sequence[int]) -> list[int]:
    total = int(np.prod(cardinalities))
    if not 0 <= group < total:
        raise IndexError(f"group {group} outside [0, {total})")
    out = []
    for c in reversed(cardinalities):
        group, r = divmod(group, c)
        out.append(r)
    return out[::-1]


def map_groups(codes: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    """Vectorised ``map_to_group`` over the rows of an n x k code matrix."""
    codes = np.asarray(codes, dtype=np.int64)
    g = np.zeros(codes.shape[0], dtype=np.int64)
    for j, c in enumerate(cardinalities):
        g = g * c + codes[:, j]
    return g


def project_group(groups, cardinalities: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Group ids over the attribute subset ``keep`` computed from full group ids."""
    groups = np.asarray(groups, dtype=np.int64)
    codes = np.zeros((groups.size, len(cardinalities)), dtype=np.int64)
    rest = groups.copy()
    for j in range(len(cardinalities) - 1, -1, -1):
        rest, codes[:, j] = np.divmod(rest, cardinalities[j])
    return map_groups(codes[:, list(keep)], [cardinalities[j] for j in keep])


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodedDataset:
    X: np.ndarray
    y: np.ndarray
    s_multi: np.ndarray
    group: np.ndarray
    group_card: int
    cardinalities: tuple[int, ...]
    sensitive_names: tuple[str, ...]
    codes: np.ndarray  # n x K category index of every schema sensitive attribute
    all_sensitive: tuple[str, ...]
    all_cardinalities: tuple[int, ...]
    feature_names: tuple[str, ...]
    continuous_cols: tuple[int, ...]
    raw_continuous: np.ndarray
    n_classes: int
    rows: np.ndarray = field(default=None)  # row indices into the source table
    center: np.ndarray = field(default=None)
    spread: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def groups_for(self, names: Sequence[str]) -> tuple[np.ndarray, int]:
        """Joint group ids (and their count) for any subset of the schema's sensitive attributes."""
        idx = []
        for n in names:
            if n not in self.all_sensitive:
                raise SchemaError(f"unknown sensitive attribute {n!r}")
            idx.append(self.all_sensitive.index(n))
        cards = [self.all_cardinalities[i] for i in idx]
        return map_groups(self.codes[:, idx], cards), int(np.prod(cards))

    def subset(self, rows) -> "EncodedDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(
            self,
            X=self.X[rows],
            y=self.y[rows],
            s_multi=self.s_multi[rows],
            group=self.group[rows],
            codes=self.codes[rows],
            raw_continuous=self.raw_continuous[rows],
            rows=self.rows[rows],
        )

    def standardized(self, center: np.ndarray, spread: np.ndarray) -> "EncodedDataset":
        X = self.X.copy()
        if self.continuous_cols:
            X[:, list(self.continuous_cols)] = (self.raw_continuous - center) / spread
        return replace(self, X=X, center=np.asarray(center), spread=np.asarray(spread))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.rows, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def _fit_scaler(raw: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    center = raw.mean(axis=0)
    spread = raw.std(axis=0)
    for name, s in zip(names, spread):
        if not s > 0:
            raise DataError(f"continuous column {name!r} has zero variance")
    return center, spread


def encode(
    table: RawTable,
    schema: DatasetSchema,
    sensitive: Sequence[str] | None = None,
    include_sensitive: bool = True,
    fit_rows=None,
) -> EncodedDataset:
    """One-hot categorical blocks in schema order, z-scored continuous columns.

    ``sensitive`` selects which schema attributes form the joint group (all by
    default). Scaling statistics come from ``fit_rows`` (all rows when None);
    ``split`` refits them on the training rows.
    """
    sensitive = list(schema.sensitive_names if sensitive is None else sensitive)
    if not sensitive:
        raise SchemaError("select at least one sensitive attribute")
    sel_cols = [schema.sensitive_column(n) for n in sensitive]
    n = table.n_rows
    blocks, names, cont_pos, cont_raw, cont_names = [], [], [], [], []
    width = 0
    in_x = list(schema.features) + (list(schema.sensitive) if include_sensitive else [])
    for col in in_x:
        vals = table.columns[col.name]
        if col.kind == CONTINUOUS:
            arr = np.asarray(vals, dtype=np.float64)
            blocks.append(arr[:, None])
            cont_pos.append(width)
            cont_raw.append(arr)
            cont_names.append(col.name)
            names.append(col.name)
            width += 1
        else:
            lookup = {v: i for i, v in enumerate(col.categories)}
            idx = np.fromiter((lookup[v] for v in vals), dtype=np.int64, count=n)
            onehot = np.zeros((n, len(col.categories)))
            onehot[np.arange(n), idx] = 1.0
            blocks.append(onehot)
            names.extend(f"{col.name}={v}" for v in col.categories)
            width += len(col.categories)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    raw = np.column_stack(cont_raw) if cont_raw else np.zeros((n, 0))

    label_lookup = {v: i for i, v in enumerate(schema.label_values)}
    y = np.fromiter((label_lookup[v] for v in table.columns[schema.label]), dtype=np.int64, count=n)

    all_cards = tuple(len(c.categories) for c in schema.sensitive)
    codes = np.zeros((n, len(schema.sensitive)), dtype=np.int64)
    for j, col in enumerate(schema.sensitive):
        lookup = {v: i for i, v in enumerate(col.categories)}
        codes[:, j] = [lookup[v] for v in table.columns[col.name]]
    sel_idx = [schema.sensitive_names.index(nm) for nm in sensitive]
    cards = tuple(len(c.categories) for c in sel_cols)
    s_multi = np.zeros((n, sum(cards)))
    offset = 0
    for j, c in zip(sel_idx, cards):
        s_multi[np.arange(n), offset + codes[:, j]] = 1.0
        offset += c

    ds = EncodedDataset(
        X=X,
        y=y,
        s_multi=s_multi,
        group=map_groups(codes[:, sel_idx], cards),
        group_card=int(np.prod(cards)),
        cardinalities=cards,
        sensitive_names=tuple(sensitive),
        codes=codes,
        all_sensitive=tuple(schema.sensitive_names),
        all_cardinalities=all_cards,
        feature_names=tuple(names),
        continuous_cols=tuple(cont_pos),
        raw_continuous=raw,
        n_classes=len(schema.label_values),
        rows=np.arange(n),
    )
    fit = raw if fit_rows is None else raw[np.asarray(fit_rows)]
    if cont_names:
        center, spread = _fit_scaler(fit, cont_names)
    else:
        center, spread = np.zeros(0), np.ones(0)
    return ds.standardized(center, spread)


# ---------------------------------------------------------------------------
# splitting and batching


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("need three positive split fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.fractions[0] * n))
    n_val = int(round(spec.fractions[1] * n))
    parts = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
    if any(p.size == 0 for p in parts):
        raise ValueError("a split came out empty")
    return tuple(np.sort(p) for p in parts)


def split(ds: EncodedDataset, spec: SplitSpec) -> tuple[EncodedDataset, EncodedDataset, EncodedDataset]:
    """Disjoint train/validation/test subsets, all scaled with training statistics."""
    tr, va, te = split_indices(ds.n, spec)
    train = ds.subset(tr)
    names = [ds.feature_names[c] for c in ds.continuous_cols]
    if ds.continuous_cols:
        center, spread = _fit_scaler(train.raw_continuous, names)
    else:
        center, spread = np.zeros(0), np.ones(0)
    return tuple(part.standardized(center, spread) for part in (train, ds.subset(va), ds.subset(te)))


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index slices covering every row exactly once; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def load_dataset(csv_path, schema_path, sensitive=None, include_sensitive=True) -> tuple[EncodedDataset, DatasetSchema]:
    schema = DatasetSchema.load(schema_path)
    table = load_csv(csv_path, schema)
    return encode(table, schema, sensitive=sensitive, include_sensitive=include_sensitive), schema


def schema_dir() -> Path:
    return Path(__file__).with_name("schemas")
