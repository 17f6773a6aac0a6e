"""Dataset schema, CSV ingestion, quantization and fold splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class DataError(ValueError):
    """Raised for schema violations, bad files and degenerate splits."""


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout plus the audit configuration (target, protected group)."""

    columns: tuple  # ordered tuple of (name, kind)
    target: str
    protected: str
    privileged_value: str
    id_columns: tuple = ()

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        for col in (self.target, self.protected):
            if col not in names:
                raise DataError(f"column {col!r} not in schema")
            if self.kind_of(col) != CATEGORICAL:
                raise DataError(f"column {col!r} must be categorical")
        for col in self.id_columns:
            if col not in names:
                raise DataError(f"id column {col!r} not in schema")

    def kind_of(self, name):
        for col, kind in self.columns:
            if col == name:
                return kind
        raise KeyError(name)

    @property
    def column_names(self):
        return [name for name, _ in self.columns]

    def metric_columns(self):
        """Columns metrics read from: everything except id columns."""
        return [name for name, _ in self.columns if name not in self.id_columns]

    def feature_columns(self):
        """Classifier inputs: everything except target and id columns."""
        return [
            name
            for name, _ in self.columns
            if name != self.target and name not in self.id_columns
        ]

    @classmethod
    def from_json(cls, obj):
        return cls(
            columns=tuple((c["name"], c["kind"]) for c in obj["columns"]),
            target=obj["target"],
            protected=obj["protected"]["column"],
            privileged_value=str(obj["protected"]["privileged_value"]),
            id_columns=tuple(obj.get("id_columns", [])),
        )

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self):
        return {
            "columns": [{"name": n, "kind": k} for n, k in self.columns],
            "target": self.target,
            "protected": {
                "column": self.protected,
                "privileged_value": self.privileged_value,
            },
            "id_columns": list(self.id_columns),
        }


@dataclass(frozen=True)
class Origin:
    kind: str  # "real" | "synthetic"
    model_id: str = ""
    fold_id: int = -1
    checkpoint_id: str = ""

    @classmethod
    def real(cls):
        return cls(kind="real")

    @classmethod
    def synthetic(cls, model_id, fold_id=-1, checkpoint_id=""):
        return cls("synthetic", model_id, fold_id, checkpoint_id)


@dataclass
class TabularDataset:
    """Rows stored column-wise: floats for continuous, strings for categorical."""

    schema: DatasetSchema
    columns: dict  # name -> np.ndarray (float64 or object)
    origin: Origin = field(default_factory=Origin.real)
    dropped_rows: int = 0

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1:
            raise DataError("ragged columns")
        if self.n_rows < 1:
            raise DataError("dataset must contain at least one row")

    @property
    def n_rows(self):
        return len(next(iter(self.columns.values())))

    def column(self, name):
        return self.columns[name]

    def subset(self, indices):
        idx = np.asarray(indices)
        return TabularDataset(
            schema=self.schema,
            columns={k: v[idx] for k, v in self.columns.items()},
            origin=self.origin,
        )

    def with_origin(self, origin):
        return TabularDataset(self.schema, dict(self.columns), origin, self.dropped_rows)

    @classmethod
    def from_rows(cls, schema, rows, origin=None):
        cols = {}
        for j, (name, kind) in enumerate(schema.columns):
            vals = [row[j] for row in rows]
            if kind == CONTINUOUS:
                cols[name] = np.array([float(v) for v in vals], dtype=np.float64)
            else:
                cols[name] = np.array([str(v) for v in vals], dtype=object)
        return cls(schema, cols, origin or Origin.real())

    def iter_rows(self):
        names = self.schema.column_names
        arrays = [self.columns[n] for n in names]
        for i in range(self.n_rows):
            yield tuple(a[i] for a in arrays)

    def to_csv(self, path):
        names = self.schema.column_names
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in self.iter_rows():
                writer.writerow(
                    [_render_float(v) if isinstance(v, float) else v for v in row]
                )


def _render_float(x):
    return f"{x:.12g}"


def load_csv(path, schema, origin=None):
    """Load an RFC-4180 CSV, dropping rows with missing or unparseable cells."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if header != schema.column_names:
            raise DataError(
                f"{path}: header {header} does not match schema {schema.column_names}"
            )
        kinds = [kind for _, kind in schema.columns]
        kept, dropped = [], 0
        for row in reader:
            if len(row) != len(kinds):
                dropped += 1
                continue
            parsed, ok = [], True
            for value, kind in zip(row, kinds):
                if value == "":
                    ok = False
                    break
                if kind == CONTINUOUS:
                    try:
                        parsed.append(float(value))
                    except ValueError:
                        ok = False
                        break
                    if not math.isfinite(parsed[-1]):
                        ok = False
                        break
                else:
                    parsed.append(value)
            if ok:
                kept.append(parsed)
            else:
                dropped += 1
    if not kept:
        raise DataError(f"{path}: zero surviving rows")
    data = TabularDataset.from_rows(schema, kept, origin)
    data.dropped_rows = dropped
    return data


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    seed: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_folds(data, ratios, num_folds, base_seed):
    """Seeded shuffles partitioned into train/val/test by the given ratios."""
    r_train, r_val, r_test = ratios
    if min(r_train, r_val, r_test) <= 0:
        raise DataError("split fractions must be positive")
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    if num_folds < 1:
        raise DataError("num_folds must be >= 1")
    n = data.n_rows
    n_train = int(math.floor(n * r_train))
    n_val = int(math.floor(n * r_val))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) == 0:
        raise DataError(f"empty split for N={n} with ratios {ratios}")
    folds = []
    for fold_id in range(num_folds):
        seed = base_seed + fold_id
        perm = np.random.default_rng(seed).permutation(n)
        folds.append(
            FoldSplit(
                fold_id=fold_id,
                seed=seed,
                train=np.sort(perm[:n_train]),
                val=np.sort(perm[n_train : n_train + n_val]),
                test=np.sort(perm[n_train + n_val :]),
            )
        )
    return folds


UNSEEN = "<unseen>"


class Quantizer:
    """Maps every column to integer tokens.

    Continuous columns use equal-frequency bins fit on real training rows,
    half-open intervals [edge_i, edge_{i+1}) with the last bin closed.
    Categorical columns map observed categories to tokens plus one reserved
    unseen token absorbing novel values.
    """

    def __init__(self, bins=10):
        if bins < 2:
            raise DataError("bins must be >= 2")
        self.bins = bins
        self.columns_ = None
        self.edges_ = {}  # continuous col -> interior edges
        self.bounds_ = {}  # continuous col -> (train min, train max)
        self.categories_ = {}  # categorical col -> ordered category list
        self.warnings_ = []

    def get_params(self, deep=True):
        return {"bins": self.bins}

    def set_params(self, **params):
        for key, value in params.items():
            setattr(self, key, value)
        return self

    def fit(self, data):
        self.columns_ = data.schema.metric_columns()
        self.warnings_ = []
        for name in self.columns_:
            kind = data.schema.kind_of(name)
            values = data.column(name)
            if kind == CONTINUOUS:
                qs = np.linspace(0, 1, self.bins + 1)[1:-1]
                edges = np.unique(np.quantile(values, qs))
                # constant column collapses to a single bin
                edges = edges[(edges > values.min()) & (edges <= values.max())]
                if len(edges) == 0:
                    self.warnings_.append(
                        f"column {name!r} is constant; quantized to a single bin"
                    )
                self.edges_[name] = edges
                self.bounds_[name] = (float(values.min()), float(values.max()))
            else:
                self.categories_[name] = sorted(set(values.tolist()))
        return self

    def _check_fitted(self):
        if self.columns_ is None:
            raise DataError("quantizer not fitted")

    def vocab_size(self, name):
        self._check_fitted()
        if name in self.edges_:
            return len(self.edges_[name]) + 1
        return len(self.categories_[name]) + 1  # reserved unseen token

    def token_values(self, name):
        """Representative value per token: bin centers or category labels.

        The unseen categorical token reports the UNSEEN sentinel.
        """
        self._check_fitted()
        if name in self.edges_:
            lo, hi = self.bounds_[name]
            full = np.concatenate([[lo], self.edges_[name], [hi]])
            return [(full[i] + full[i + 1]) / 2.0 for i in range(len(full) - 1)]
        return list(self.categories_[name]) + [UNSEEN]

    def transform_column(self, name, values):
        self._check_fitted()
        if name in self.edges_:
            return np.searchsorted(self.edges_[name], values, side="right").astype(
                np.int64
            )
        lookup = {c: i for i, c in enumerate(self.categories_[name])}
        unseen = len(self.categories_[name])
        return np.array([lookup.get(v, unseen) for v in values], dtype=np.int64)

    def transform(self, data):
        """Token matrix of shape (n_rows, len(columns_))."""
        self._check_fitted()
        out = np.empty((data.n_rows, len(self.columns_)), dtype=np.int64)
        for j, name in enumerate(self.columns_):
            out[:, j] = self.transform_column(name, data.column(name))
        return out

    def fit_transform(self, data):
        return self.fit(data).transform(data)

    def decode(self, tokens, schema, like):
        """Rebuild a dataset from a token matrix, using bin centers for numerics.

        Columns absent from the quantizer (id columns) are copied from `like`.
        """
        self._check_fitted()
        cols = {}
        for name, kind in schema.columns:
            if name not in self.columns_:
                cols[name] = like.column(name)[: tokens.shape[0]]
                continue
            j = self.columns_.index(name)
            values = self.token_values(name)
            if kind == CONTINUOUS:
                cols[name] = np.array([values[t] for t in tokens[:, j]], dtype=np.float64)
            else:
                cols[name] = np.array([values[t] for t in tokens[:, j]], dtype=object)
        return TabularDataset(schema, cols, like.origin)


def fit_quantizer(real_train, bins=10):
    return Quantizer(bins=bins).fit(real_train)


def quantize(data, quantizer):
    return quantizer.transform(data)


def canonical_row_hash(row):
    """64-bit digest; floats canonicalized to 12 significant digits."""
    parts = []
    for value in row:
        if isinstance(value, (float, np.floating)):
            parts.append(_render_float(float(value)))
        else:
            parts.append(str(value))
    payload = "\x1f".join(parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")
