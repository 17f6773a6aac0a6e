"""Deterministic feature embedding, random Fourier features and ANOVA-F selection."""

from __future__ import annotations

import csv

import numpy as np

from .data import CONTINUOUS, DataError


class Embedder:
    """Standardize continuous columns and one-hot encode categoricals.

    Fit statistics come from real training rows only; target and id columns
    are excluded. A categorical value unseen at fit time maps to the all-zero
    block. Constant continuous columns emit the constant 0 feature.
    """

    def __init__(self):
        self.feature_columns_ = None
        self.cont_stats_ = {}  # name -> (mean, std)
        self.cat_vocab_ = {}  # name -> ordered category list
        self.dim_ = None

    def get_params(self, deep=True):
        return {}

    def fit(self, real_train):
        schema = real_train.schema
        self.feature_columns_ = schema.feature_columns()
        dim = 0
        for name in self.feature_columns_:
            values = real_train.column(name)
            if schema.kind_of(name) == CONTINUOUS:
                std = float(values.std())
                self.cont_stats_[name] = (float(values.mean()), std)
                dim += 1
            else:
                vocab = sorted(set(values.tolist()))
                self.cat_vocab_[name] = vocab
                dim += len(vocab)
        self.dim_ = dim
        return self

    def transform(self, data):
        if self.dim_ is None:
            raise DataError("embedder not fitted")
        n = data.n_rows
        out = np.zeros((n, self.dim_), dtype=np.float64)
        offset = 0
        for name in self.feature_columns_:
            values = data.column(name)
            if name in self.cont_stats_:
                mean, std = self.cont_stats_[name]
                if std > 0:
                    out[:, offset] = (values - mean) / std
                offset += 1
            else:
                vocab = self.cat_vocab_[name]
                lookup = {c: i for i, c in enumerate(vocab)}
                for i, v in enumerate(values):
                    j = lookup.get(v)
                    if j is not None:
                        out[i, offset + j] = 1.0
                offset += len(vocab)
        return out

    def fit_transform(self, data):
        return self.fit(data).transform(data)


def fit_embedder(real_train):
    return Embedder().fit(real_train)


def embed(data, embedder):
    return embedder.transform(data)


def load_precomputed_embeddings(path):
    """CSV of row-id + d float columns, bypassing the default embedder.

    Returns (row_ids, matrix) with rows in file order.
    """
    ids, rows = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2:
            raise DataError("embedding file needs a row-id column plus features")
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise DataError("embedding file has no rows")
    return ids, np.asarray(rows, dtype=np.float64)


def median_heuristic_bandwidth(X, subsample=1000, seed=0):
    """Median pairwise Euclidean distance over a seeded subsample."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError("need at least 2 rows for the median heuristic")
    if X.shape[0] > subsample:
        idx = np.random.default_rng(seed).choice(X.shape[0], subsample, replace=False)
        X = X[np.sort(idx)]
    d2 = np.sum(X * X, axis=1)
    sq = d2[:, None] + d2[None, :] - 2.0 * (X @ X.T)
    iu = np.triu_indices(X.shape[0], k=1)
    sigma = float(np.median(np.sqrt(np.maximum(sq[iu], 0.0))))
    return max(sigma, 1e-12)


class RFFMap:
    """Random Fourier features approximating the Gaussian kernel.

    x -> sqrt(2/m) * cos(W^T x + b), W ~ N(0, 1/sigma^2), b ~ U[0, 2pi).
    """

    def __init__(self, dim, num_features, bandwidth, seed=0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.num_features = num_features
        self.bandwidth = bandwidth
        self.seed = seed
        self.W = rng.standard_normal((dim, num_features)) / bandwidth
        self.b = rng.uniform(0.0, 2.0 * np.pi, num_features)

    def get_params(self, deep=True):
        return {
            "dim": self.dim,
            "num_features": self.num_features,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
        }

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.dim:
            raise DataError(
                f"RFF map expects {self.dim} columns, got {X.shape[1]}"
            )
        return np.sqrt(2.0 / self.num_features) * np.cos(X @ self.W + self.b)


def rff_features(X, rff_map):
    return rff_map.transform(X)


def anova_f_select(X, labels, k):
    """Indices of the top-k features by one-way ANOVA F, ties to lower index."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("ANOVA-F selection needs at least 2 classes")
    if k < 1:
        raise DataError("k must be >= 1")
    n = X.shape[0]
    grand = X.mean(axis=0)
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for c in classes:
        block = X[labels == c]
        mean_c = block.mean(axis=0)
        ss_between += block.shape[0] * (mean_c - grand) ** 2
        ss_within += ((block - mean_c) ** 2).sum(axis=0)
    df_between = len(classes) - 1
    df_within = n - len(classes)
    ms_between = ss_between / df_between
    ms_within = ss_within / max(df_within, 1)
    f = np.full(X.shape[1], 0.0)
    nonzero = ms_within > 0
    f[nonzero] = ms_between[nonzero] / ms_within[nonzero]
    # zero within-class variance with real separation is a perfect feature
    f[(~nonzero) & (ms_between > 0)] = np.inf
    order = np.argsort(-f, kind="stable")
    return np.sort(order[: min(k, X.shape[1])])
