"""Leakage metrics between real training data and synthetic data."""

from __future__ import annotations

import numpy as np

from .data import DataError, canonical_row_hash
from .fidelity import _pairwise_distances


def replicated_rows(real_train, synth):
    """Count of synthetic rows exactly matching some real training row.

    Hash match is confirmed by field-wise equality (floats compared after
    12-significant-digit canonicalization, matching the hash).
    """
    buckets = {}
    for row in real_train.iter_rows():
        buckets.setdefault(canonical_row_hash(row), []).append(row)

    def _eq(a, b):
        for x, y in zip(a, b):
            if isinstance(x, (float, np.floating)):
                if f"{float(x):.12g}" != f"{float(y):.12g}":
                    return False
            elif x != y:
                return False
        return True

    count = 0
    for row in synth.iter_rows():
        candidates = buckets.get(canonical_row_hash(row))
        if candidates and any(_eq(row, c) for c in candidates):
            count += 1
    return count


def hamming_distances(reference_tokens, query_tokens):
    """Token mismatch counts between every query row and every reference row."""
    ref = np.asarray(reference_tokens)
    qry = np.asarray(query_tokens)
    out = np.zeros((qry.shape[0], ref.shape[0]), dtype=np.float64)
    for j in range(ref.shape[1]):
        out += qry[:, j][:, None] != ref[:, j][None, :]
    return out


def _histogram_mode(values, bins=32):
    """Midpoint of the most-populated equal-width bin (report-only statistic)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return lo
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    i = int(np.argmax(counts))
    return float((edges[i] + edges[i + 1]) / 2.0)


def knn_distance_stats(reference, query, k_list=(1, 3, 5), distances=None):
    """Per-k {mean, median, mode, std} of query-to-reference NN distances.

    For k=1 the per-row distance is the 1-NN distance; for larger k it is the
    median distance among the k nearest neighbors. Pass `distances` to reuse a
    precomputed (n_query, n_reference) matrix (e.g. Hamming over tokens);
    otherwise Euclidean distances are computed from the point matrices.
    """
    if distances is None:
        distances = _pairwise_distances(query, reference)
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape[1] < max(k_list):
        raise DataError(
            f"reference needs at least {max(k_list)} rows for k_list={list(k_list)}"
        )
    ordered = np.sort(distances, axis=1)
    stats = {}
    for k in k_list:
        per_row = ordered[:, 0] if k == 1 else np.median(ordered[:, :k], axis=1)
        stats[k] = {
            "mean": float(per_row.mean()),
            "median": float(np.median(per_row)),
            "mode": _histogram_mode(per_row),
            "std": float(per_row.std()),
        }
    return stats
