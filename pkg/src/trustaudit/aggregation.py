"""Polarity alignment, ECDF/copula aggregation, ranking and checkpoint selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import DataError

DIMENSIONS = ("fidelity", "privacy", "utility", "fairness", "robustness")

DELTA_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricRecord:
    metric: str
    dimension: str
    polarity: int
    value: float | None
    dataset_id: str = ""
    model_id: str = ""
    fold_id: int = 0
    checkpoint_id: str = ""
    classifier_seed: int = -1
    split: str = "none"  # val | test | none

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise DataError(f"unknown trust dimension {self.dimension!r}")
        if self.polarity not in (1, -1):
            raise DataError("polarity must be +1 or -1")
        if self.value is not None and not math.isfinite(self.value):
            raise DataError(f"metric {self.metric!r} has non-finite value")

    def aligned(self):
        """m~ = p * m; missing values pass through as None."""
        if self.value is None:
            return None
        return self.polarity * self.value

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


def align_polarity(record):
    return record.aligned()


def write_records_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_records_jsonl(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(MetricRecord.from_json(json.loads(line)))
    return records


@dataclass(frozen=True)
class TrustProfile:
    """Named non-negative weight vector over the five trust dimensions."""

    name: str
    weights: tuple  # (fidelity, privacy, utility, fairness, robustness), sums to 1
    raw: tuple = ()

    def __post_init__(self):
        if len(self.weights) != 5:
            raise DataError("profile needs five weights")
        if min(self.weights) < 0:
            raise DataError("profile weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise DataError("profile weights must sum to 1")

    @classmethod
    def from_raw(cls, name, raw):
        raw = tuple(float(v) for v in raw)
        total = sum(raw)
        if total <= 0:
            raise DataError("profile weights must not all be zero")
        return cls(name=name, weights=tuple(v / total for v in raw), raw=raw)

    def weight(self, dimension):
        return self.weights[DIMENSIONS.index(dimension)]


# Preset profiles: raw integer notation normalized on construction.
PRESET_PROFILES = {
    "all": (100, 100, 100, 100, 100),
    "e(PU)": (50, 100, 100, 50, 50),
    "e(PUF)": (50, 100, 100, 100, 50),
    "U": (0, 0, 100, 0, 0),
    "PU": (0, 100, 100, 0, 0),
    "UF": (0, 0, 100, 100, 0),
    "e(UF)r(R)": (50, 50, 100, 100, 0),
    "UFR": (0, 0, 100, 100, 100),
    "UR": (0, 0, 100, 0, 100),
    "PUR": (0, 100, 100, 0, 100),
}


def preset_profiles():
    return [TrustProfile.from_raw(name, raw) for name, raw in PRESET_PROFILES.items()]


def load_profiles(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return [TrustProfile.from_raw(name, raw) for name, raw in obj.items()]


class MetricPool:
    """Frozen pool of aligned values per metric, shared by all ranked items."""

    def __init__(self, scope="ranking"):
        self.scope = scope
        self._values = {}
        self._sorted = None

    def add(self, record):
        aligned = record.aligned()
        if aligned is not None:
            self._values.setdefault(record.metric, []).append(aligned)

    def freeze(self):
        self._sorted = {k: np.sort(np.asarray(v)) for k, v in self._values.items()}
        return self

    def ecdf(self, metric, x):
        if self._sorted is None:
            self.freeze()
        pool = self._sorted.get(metric)
        if pool is None or len(pool) == 0:
            raise DataError(f"empty pool for metric {metric!r}")
        return ecdf_eval(pool, x)


def ecdf_eval(sorted_pool, x):
    """u = #{pool <= x} / |pool|, clamped below at 1 / (2 |pool|)."""
    pool = np.asarray(sorted_pool)
    n = len(pool)
    if n == 0:
        raise DataError("empty pool")
    u = float(np.searchsorted(pool, x, side="right")) / n
    return max(u, 1.0 / (2 * n))


def dimension_index(u_values, beta=None):
    """Geometric-mean copula aggregate of normalized scores.

    Missing scores (None) are dropped and beta renormalized over the rest.
    """
    if beta is None:
        beta = [1.0] * len(u_values)
    pairs = [(u, b) for u, b in zip(u_values, beta) if u is not None]
    if not pairs:
        raise DataError("all metrics missing for dimension")
    total = sum(b for _, b in pairs)
    if total <= 0:
        raise DataError("metric weights must not all be zero")
    return float(math.exp(sum(b / total * math.log(u) for u, b in pairs)))


def trustworthiness_index(pi_by_dimension, profile):
    """Weighted geometric mean of dimension indices."""
    log_tau = 0.0
    for dim in DIMENSIONS:
        w = profile.weight(dim)
        if w == 0:
            continue
        if dim not in pi_by_dimension:
            raise DataError(f"missing required dimension {dim!r}")
        log_tau += w * math.log(pi_by_dimension[dim])
    return float(math.exp(log_tau))


def geo_mean_deviation(values):
    """Geometric mean and mean squared deviation around it."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 1:
        raise DataError("need at least one value")
    gmean = float(np.exp(np.mean(np.log(values))))
    delta = float(np.mean((values - gmean) ** 2))
    return gmean, delta


@dataclass
class RankedEntry:
    model_id: str
    tau_mean: float
    tau_delta: float
    score: float


def rank_with_uncertainty(per_model, alpha=0.0):
    """Descending R^alpha = log tau_mean - alpha * log tau_delta.

    `per_model` maps model id -> (tau_mean, tau_delta). Ties break by higher
    tau_mean, then lexicographic model id.
    """
    if alpha < 0:
        raise DataError("alpha must be >= 0")
    entries = []
    for model_id, (tau_mean, tau_delta) in per_model.items():
        score = math.log(tau_mean)
        if alpha > 0:
            score -= alpha * math.log(max(tau_delta, DELTA_FLOOR))
        entries.append(RankedEntry(model_id, tau_mean, tau_delta, score))
    entries.sort(key=lambda e: (-e.score, -e.tau_mean, e.model_id))
    return entries


def _group_records(records, key):
    groups = {}
    for rec in records:
        groups.setdefault(key(rec), []).append(rec)
    return groups


def indices_from_records(records, pool=None):
    """Per-dimension copula indices from one item's records, against a pool.

    Classifier-seed replicates enter as separate metric columns (metric name
    suffixed by seed upstream), with uniform beta over present metrics.
    """
    if pool is None:
        pool = MetricPool()
        for rec in records:
            pool.add(rec)
        pool.freeze()
    by_dim = _group_records(records, lambda r: r.dimension)
    indices = {}
    for dim, recs in by_dim.items():
        u_values = []
        for rec in recs:
            aligned = rec.aligned()
            u_values.append(None if aligned is None else pool.ecdf(rec.metric, aligned))
        indices[dim] = dimension_index(u_values)
    return indices


def select_checkpoint(records, profile):
    """Checkpoint maximizing the validation trustworthiness index.

    ECDF statistics are pooled across all folds and checkpoints of the model.
    Utility/fairness/robustness records must carry split="val". The per-fold
    trustworthiness indices are combined by geometric mean across folds;
    ties resolve to the earliest checkpoint.
    """
    usable = [
        r for r in records
        if r.dimension in ("fidelity", "privacy") or r.split == "val"
    ]
    if not usable:
        raise DataError("no validation records")
    pool = MetricPool(scope="selection")
    for rec in usable:
        pool.add(rec)
    pool.freeze()
    by_ckp = _group_records(usable, lambda r: r.checkpoint_id)
    if not by_ckp:
        raise DataError("empty checkpoint set")
    scores = {}
    for ckp, recs in by_ckp.items():
        taus = []
        for fold_recs in _group_records(recs, lambda r: r.fold_id).values():
            indices = indices_from_records(fold_recs, pool)
            taus.append(trustworthiness_index(indices, profile))
        scores[ckp] = geo_mean_deviation(taus)[0]
    def _ckp_order(ckp):
        try:
            return (0, int(ckp), str(ckp))
        except (TypeError, ValueError):
            return (1, 0, str(ckp))

    # ties resolve to the earliest checkpoint in natural order
    ordered = sorted(scores, key=_ckp_order)
    best = ordered[0]
    for ckp in ordered[1:]:
        if scores[ckp] > scores[best]:
            best = ckp
    return best, scores


def overlap_at_k(list_a, list_b, k):
    """Jaccard overlap of the two top-k prefixes."""
    if k > len(list_a) or k > len(list_b):
        raise DataError("k exceeds list length")
    top_a, top_b = set(list_a[:k]), set(list_b[:k])
    return len(top_a & top_b) / len(top_a | top_b)
