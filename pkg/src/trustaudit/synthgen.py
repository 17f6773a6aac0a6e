"""Gaussian-copula baseline generator, private output sampler, collapse harness."""

from __future__ import annotations

import json

import numpy as np
from scipy.stats import norm

from .data import CONTINUOUS, DataError, Origin, TabularDataset


class GaussianCopulaGenerator:
    """Empirical marginals coupled through a latent Gaussian correlation.

    Rank scores are mapped to normal quantiles (categoricals via seeded
    uniform jitter within each category's probability mass); the latent
    correlation matrix is shrunk by (1 - lam) R + lam I for PSD safety.
    """

    def __init__(self, seed=0, shrinkage=1e-3):
        self.seed = seed
        self.shrinkage = shrinkage
        self.schema_ = None
        self.marginals_ = None  # name -> ("continuous", sorted values) | ("categorical", cats, probs)
        self.correlation_ = None

    def get_params(self, deep=True):
        return {"seed": self.seed, "shrinkage": self.shrinkage}

    def fit(self, train):
        if train.n_rows < 10:
            raise DataError("need at least 10 training rows")
        self.schema_ = train.schema
        rng = np.random.default_rng(self.seed)
        names = train.schema.column_names
        n = train.n_rows
        scores = np.zeros((n, len(names)))
        self.marginals_ = {}
        for j, name in enumerate(names):
            values = train.column(name)
            if train.schema.kind_of(name) == CONTINUOUS:
                self.marginals_[name] = ("continuous", np.sort(values.astype(np.float64)))
                order = np.argsort(values, kind="stable")
                ranks = np.empty(n)
                ranks[order] = np.arange(1, n + 1)
                scores[:, j] = norm.ppf((ranks - 0.5) / n)
            else:
                cats, counts = np.unique(values.astype(str), return_counts=True)
                probs = counts / counts.sum()
                self.marginals_[name] = ("categorical", list(cats), probs)
                cum = np.concatenate([[0.0], np.cumsum(probs)])
                lookup = {c: i for i, c in enumerate(cats)}
                idx = np.array([lookup[str(v)] for v in values])
                u = cum[idx] + rng.uniform(0, 1, n) * probs[idx]
                scores[:, j] = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        constant = scores.std(axis=0) == 0
        corr = np.eye(len(names))
        active = ~constant
        if active.sum() >= 2:
            sub = np.corrcoef(scores[:, active], rowvar=False)
            corr[np.ix_(active, active)] = sub
        corr = (1 - self.shrinkage) * corr + self.shrinkage * np.eye(len(names))
        corr[np.diag_indices_from(corr)] = 1.0
        self.correlation_ = corr
        return self

    def sample(self, n_rows, seed=0):
        if self.correlation_ is None:
            raise DataError("generator not fitted")
        if n_rows < 1:
            raise DataError("n_rows must be >= 1")
        rng = np.random.default_rng(seed)
        try:
            chol = np.linalg.cholesky(self.correlation_)
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(self.correlation_)
            chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
        z = rng.standard_normal((n_rows, len(self.schema_.columns))) @ chol.T
        u = norm.cdf(z)
        cols = {}
        for j, name in enumerate(self.schema_.column_names):
            marginal = self.marginals_[name]
            if marginal[0] == "continuous":
                values = marginal[1]
                if values[0] == values[-1]:
                    cols[name] = np.full(n_rows, values[0])
                else:
                    cols[name] = np.quantile(values, u[:, j], method="linear")
            else:
                _, cats, probs = marginal
                cum = np.cumsum(probs)
                idx = np.minimum(np.searchsorted(cum, u[:, j], side="right"), len(cats) - 1)
                cols[name] = np.array([cats[i] for i in idx], dtype=object)
        return TabularDataset(
            self.schema_, cols, Origin.synthetic("gaussian_copula")
        )

    def to_json(self):
        marginals = {}
        for name, marg in self.marginals_.items():
            if marg[0] == "continuous":
                marginals[name] = {"kind": "continuous", "values": marg[1].tolist()}
            else:
                marginals[name] = {
                    "kind": "categorical",
                    "categories": marg[1],
                    "probs": marg[2].tolist(),
                }
        return {
            "seed": self.seed,
            "shrinkage": self.shrinkage,
            "schema": self.schema_.to_json(),
            "marginals": marginals,
            "correlation": self.correlation_.tolist(),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj):
        from .data import DatasetSchema

        model = cls(seed=obj["seed"], shrinkage=obj["shrinkage"])
        model.schema_ = DatasetSchema.from_json(obj["schema"])
        model.marginals_ = {}
        for name, marg in obj["marginals"].items():
            if marg["kind"] == "continuous":
                model.marginals_[name] = ("continuous", np.asarray(marg["values"]))
            else:
                model.marginals_[name] = (
                    "categorical",
                    list(marg["categories"]),
                    np.asarray(marg["probs"]),
                )
        model.correlation_ = np.asarray(obj["correlation"])
        return model

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fit_gaussian_copula(train, seed=0):
    return GaussianCopulaGenerator(seed=seed).fit(train)


def sample_gaussian_copula(model, n_rows, seed=0):
    return model.sample(n_rows, seed=seed)


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("simplex projection needs finite entries")
    n = len(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - theta, 0.0)


class PrivateSamplerConfig:
    def __init__(self, epsilon, seq_length, vocab_sizes):
        if epsilon <= 0:
            raise DataError("epsilon must be > 0")
        if seq_length < 1:
            raise DataError("sequence length must be >= 1")
        self.epsilon = epsilon
        self.seq_length = seq_length
        self.vocab_sizes = list(vocab_sizes)

    def laplace_scale(self, field):
        return 2.0 * self.seq_length / (self.epsilon * self.vocab_sizes[field])


def private_sample_perturb(probs, field, cfg, seed=0, noise=None):
    """Laplace-noise the field's probabilities and project back to the simplex.

    `noise` overrides the sampled noise vector (identity at zero noise).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if noise is None:
        scale = cfg.laplace_scale(field)
        if scale == 0:
            return probs.copy()
        noise = np.random.default_rng(seed).laplace(0.0, scale, len(probs))
    noisy = probs + noise
    if np.all(noisy >= 0) and abs(noisy.sum() - 1.0) <= 1e-12:
        return noisy
    return project_to_simplex(noisy)


class IndependentCategoricalSampler:
    """Per-field independent token sampler over a fitted quantizer.

    Serves as the minimal autoregressive-generator stand-in the private
    sampler composes with: per-field token probabilities come from real
    training tokens and can be perturbed before sampling.
    """

    def __init__(self, quantizer, real_tokens):
        self.quantizer = quantizer
        real_tokens = np.asarray(real_tokens)
        self.probs = []
        for j, name in enumerate(quantizer.columns_):
            counts = np.bincount(
                real_tokens[:, j], minlength=quantizer.vocab_size(name)
            ).astype(np.float64)
            self.probs.append(counts / counts.sum())

    def field_probabilities(self, field):
        return self.probs[field].copy()

    def sample_tokens(self, n_rows, seed=0, private_cfg=None):
        rng = np.random.default_rng(seed)
        out = np.zeros((n_rows, len(self.probs)), dtype=np.int64)
        for j, probs in enumerate(self.probs):
            if private_cfg is not None:
                probs = private_sample_perturb(
                    probs, j, private_cfg, noise=rng.laplace(
                        0.0, private_cfg.laplace_scale(j), len(probs)
                    )
                )
            out[:, j] = rng.choice(len(probs), size=n_rows, p=probs / probs.sum())
        return out


def iterative_retrain(real_train, generations, rows_per_gen, seed=0):
    """Fit generation g on generation g-1's samples; returns all generations."""
    if generations < 1:
        raise DataError("generations must be >= 1")
    datasets = []
    current = real_train
    for g in range(generations):
        model = GaussianCopulaGenerator(seed=seed + g).fit(current)
        synth = model.sample(rows_per_gen, seed=seed + 1000 + g)
        synth = synth.with_origin(
            Origin.synthetic(model_id=f"generation_{g + 1}", checkpoint_id=str(g + 1))
        )
        datasets.append(synth)
        all_constant = all(
            len(np.unique(synth.column(name).astype(str))) == 1
            for name in synth.schema.column_names
        )
        if all_constant and g + 1 < generations:
            break  # degenerate collapse; truncate the chain
        current = synth
    return datasets
