"""Mixed-type table <-> dense embedding space.

Numeric feature j is embedded as ``w_j * x_j`` (x_j standard-scaled), categorical
feature j as the row ``E_j[x_j]`` of a per-column table. Slots are concatenated
in schema order, so a record maps to a vector of width ``(d_num + d_cat) * d_e``.
The label column (if any) is not embedded; it conditions the denoiser instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    vocab: tuple[str, ...] = ()

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[Column, ...]
    label_column: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        for c in self.columns:
            if c.kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.kind == CATEGORICAL:
                if len(c.vocab) < 1:
                    raise SchemaError(f"categorical column {c.name!r} has empty vocab")
                if len(set(c.vocab)) != len(c.vocab):
                    raise SchemaError(f"categorical column {c.name!r} has duplicate vocab entries")
        if self.label_column is not None:
            lab = self.column(self.label_column)
            if lab.kind != CATEGORICAL:
                raise SchemaError(f"label column {lab.name!r} must be categorical")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def feature_columns(self) -> list[Column]:
        """Columns that are embedded, i.e. everything except the label."""
        return [c for c in self.columns if c.name != self.label_column]

    @property
    def numeric_columns(self) -> list[Column]:
        return [c for c in self.feature_columns if c.kind == NUMERIC]

    @property
    def categorical_columns(self) -> list[Column]:
        return [c for c in self.feature_columns if c.kind == CATEGORICAL]

    @property
    def d_num(self) -> int:
        return len(self.numeric_columns)

    @property
    def d_cat(self) -> int:
        return len(self.categorical_columns)

    @property
    def labels(self) -> tuple[str, ...]:
        if self.label_column is None:
            return ()
        return self.column(self.label_column).vocab

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def encoded_width(self, d_e: int) -> int:
        return (self.d_num + self.d_cat) * d_e

    def to_dict(self) -> dict:
        return {
            "label_column": self.label_column,
            "columns": [{"name": c.name, "kind": c.kind, "vocab": list(c.vocab)} for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TableSchema:
        cols = tuple(Column(c["name"], c["kind"], tuple(c.get("vocab", ()))) for c in d["columns"])
        return cls(cols, d.get("label_column"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TableSchema:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_csv(path: str | Path) -> pd.DataFrame:
    """Read a CSV with every cell kept as a string; kinds come from the schema."""
    return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")


def _parse_numeric(values: pd.Series, name: str) -> np.ndarray:
    parsed = pd.to_numeric(values, errors="coerce")
    bad = parsed.isna() & values.notna()
    if bad.any() or parsed.isna().any():
        row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
        raise SchemaError(f"numeric column {name!r} has non-parsable value {values.iloc[row]!r} at row {row}")
    return parsed.to_numpy(dtype=np.float64)


def fit_schema(
    table: pd.DataFrame,
    declared_kinds: Mapping[str, str],
    label_column: str | None = None,
) -> TableSchema:
    """Build a schema from observed data; vocab is the sorted set of distinct values."""
    if len(table) == 0:
        raise SchemaError("empty table")
    unknown = [k for k in declared_kinds if k not in table.columns]
    if unknown:
        raise SchemaError(f"declared kinds reference unknown columns {unknown}")
    if label_column is not None and label_column not in table.columns:
        raise SchemaError(f"label column {label_column!r} not in table")
    cols = []
    for name in table.columns:
        kind = declared_kinds.get(name, CATEGORICAL)
        if name == label_column:
            kind = CATEGORICAL
        if kind == NUMERIC:
            _parse_numeric(table[name].astype(str), name)
            cols.append(Column(name, NUMERIC))
        elif kind == CATEGORICAL:
            vocab = tuple(sorted(set(table[name].astype(str))))
            cols.append(Column(name, CATEGORICAL, vocab))
        else:
            raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
    return TableSchema(tuple(cols), label_column)


def numeric_matrix(table: pd.DataFrame, schema: TableSchema) -> np.ndarray:
    """(n, d_num) float matrix of the numeric feature columns in schema order."""
    if not schema.numeric_columns:
        return np.zeros((len(table), 0))
    return np.column_stack([_parse_numeric(table[c.name].astype(str), c.name) for c in schema.numeric_columns])


def category_codes(table: pd.DataFrame, schema: TableSchema) -> np.ndarray:
    """(n, d_cat) integer vocab indices; unknown values are hard errors."""
    out = np.zeros((len(table), schema.d_cat), dtype=np.int64)
    for j, c in enumerate(schema.categorical_columns):
        out[:, j] = _codes(table[c.name], c)
    return out


def label_codes(table: pd.DataFrame, schema: TableSchema) -> np.ndarray | None:
    if schema.label_column is None:
        return None
    return _codes(table[schema.label_column], schema.column(schema.label_column))


def _codes(values: pd.Series, col: Column) -> np.ndarray:
    lookup = {v: i for i, v in enumerate(col.vocab)}
    vals = values.astype(str).to_numpy()
    codes = np.empty(len(vals), dtype=np.int64)
    for i, v in enumerate(vals):
        try:
            codes[i] = lookup[v]
        except KeyError:
            raise CodecError(f"column {col.name!r}: value {v!r} not in vocab") from None
    return codes


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * self.std + self.mean


def fit_scaler(data: pd.DataFrame | np.ndarray, schema: TableSchema) -> ScalerParams:
    """Standard scaler (population std) over the numeric feature columns."""
    x = data if isinstance(data, np.ndarray) else numeric_matrix(data, schema)
    x = np.asarray(x, dtype=np.float64).reshape(len(x), schema.d_num)
    if schema.d_num and len(x) == 0:
        raise SchemaError("cannot fit scaler on an empty table")
    mean = x.mean(axis=0) if len(x) else np.zeros(0)
    std = x.std(axis=0) if len(x) else np.zeros(0)
    for j, c in enumerate(schema.numeric_columns):
        if not std[j] > 0:
            raise SchemaError(f"numeric column {c.name!r} is constant (std = 0)")
    return ScalerParams(mean, std)


@dataclass
class EmbeddingSpace:
    d_e: int
    numeric_weights: np.ndarray  # (d_num, d_e)
    category_embeddings: list[np.ndarray] = field(default_factory=list)  # per column (|V_j|, d_e)

    @property
    def width(self) -> int:
        return (len(self.numeric_weights) + len(self.category_embeddings)) * self.d_e

    def params(self) -> dict[str, np.ndarray]:
        out = {"emb.num": self.numeric_weights}
        for j, e in enumerate(self.category_embeddings):
            out[f"emb.cat{j}"] = e
        return out

    def copy(self) -> EmbeddingSpace:
        return EmbeddingSpace(self.d_e, self.numeric_weights.copy(), [e.copy() for e in self.category_embeddings])


def _min_gap(table: np.ndarray) -> float:
    if len(table) < 2:
        return np.inf
    dist, _ = cKDTree(table).query(table, k=2)
    return float(dist[:, 1].min())


def init_embeddings(schema: TableSchema, d_e: int = 2, seed: int = 0, dtype=np.float64,
                    unit_numeric: bool = True, draws: int = 16) -> EmbeddingSpace:
    """Draw every embedding entry i.i.d. from N(0, 1/d_e).

    With ``unit_numeric`` each numeric weight vector is then rescaled to unit
    norm, so every numeric feature enters z0 with the same signal strength.
    Each category table is drawn ``draws`` times and the draw whose closest
    pair of codes is farthest apart is kept; nearest-neighbour decoding
    confuses categories whose codes nearly coincide. ``draws=1`` is plain i.i.d.
    """
    if int(d_e) != d_e or d_e < 1:
        raise ValueError(f"d_e must be a positive integer, got {d_e}")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_e)
    w = rng.standard_normal((schema.d_num, d_e)) * scale
    if unit_numeric:
        w = w / np.linalg.norm(w, axis=1, keepdims=True)
    w = w.astype(dtype)
    cats = []
    for c in schema.categorical_columns:
        tables = [rng.standard_normal((len(c.vocab), d_e)) * scale for _ in range(draws)]
        cats.append(max(tables, key=_min_gap).astype(dtype))
    return EmbeddingSpace(d_e, w, cats)


def embed_arrays(x_scaled: np.ndarray, codes: np.ndarray, emb: EmbeddingSpace) -> np.ndarray:
    """z0 rows from scaled numerics (n, d_num) and category codes (n, d_cat)."""
    n = len(x_scaled)
    parts = [x_scaled[:, :, None] * emb.numeric_weights[None, :, :]]
    parts.append(np.stack([e[codes[:, j]] for j, e in enumerate(emb.category_embeddings)], axis=1)
                 if emb.category_embeddings else np.zeros((n, 0, emb.d_e)))
    z = np.concatenate(parts, axis=1)
    return z.reshape(n, -1).astype(emb.numeric_weights.dtype, copy=False)


@dataclass
class EncodedBatch:
    z0: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.z0):
            raise CodecError(f"{len(self.z0)} rows but {len(self.labels)} labels")


def encode(records: pd.DataFrame, schema: TableSchema, scaler: ScalerParams, emb: EmbeddingSpace) -> EncodedBatch:
    x = scaler.apply(numeric_matrix(records, schema))
    codes = category_codes(records, schema)
    return EncodedBatch(embed_arrays(x, codes, emb), label_codes(records, schema))


def decode_arrays(z: np.ndarray, emb: EmbeddingSpace) -> tuple[np.ndarray, np.ndarray]:
    """Invert slots: least-squares projection for numerics, nearest neighbour for categories.

    Returns scaled numerics (n, d_num) and category codes (n, d_cat).
    """
    d_num, d_e = len(emb.numeric_weights), emb.d_e
    if z.shape[1] != emb.width:
        raise CodecError(f"encoded width {z.shape[1]} != expected {emb.width}")
    slots = z.reshape(len(z), -1, d_e)
    w = emb.numeric_weights
    wn = np.einsum("je,je->j", w, w)
    if np.any(wn == 0):
        raise CodecError("zero-norm numeric weight vector; projection is degenerate")
    x = np.einsum("nje,je->nj", slots[:, :d_num], w) / wn
    codes = np.zeros((len(z), len(emb.category_embeddings)), dtype=np.int64)
    for j, table in enumerate(emb.category_embeddings):
        s = slots[:, d_num + j]
        dist = ((s[:, None, :] - table[None, :, :]) ** 2).sum(-1)
        codes[:, j] = dist.argmin(axis=1)  # argmin returns the first index on ties
    return x, codes


def decode(
    encoded: np.ndarray,
    schema: TableSchema,
    scaler: ScalerParams,
    emb: EmbeddingSpace,
    labels: Sequence[int] | None = None,
) -> pd.DataFrame:
    x_scaled, codes = decode_arrays(np.asarray(encoded), emb)
    x = scaler.invert(x_scaled)
    n = len(encoded)
    out: dict[str, Iterable] = {}
    num_i = cat_i = 0
    for c in schema.columns:
        if c.name == schema.label_column:
            if labels is None:
                raise CodecError("schema has a label column but no labels were supplied")
            out[c.name] = [c.vocab[k] for k in labels]
        elif c.is_numeric:
            out[c.name] = x[:, num_i]
            num_i += 1
        else:
            out[c.name] = np.asarray(c.vocab, dtype=object)[codes[:, cat_i]] if n else []
            cat_i += 1
    return pd.DataFrame(out, columns=schema.names)
