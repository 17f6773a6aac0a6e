"""Fidelity metrics between real training data and synthetic data."""

from __future__ import annotations

import numpy as np

from .data import DataError


def _frequencies(tokens, size):
    counts = np.bincount(tokens, minlength=size).astype(np.float64)
    return counts / counts.sum()


def chi_squared_per_field(real_tokens, synth_tokens, field):
    """Chi-squared distance between normalized token histograms of one field.

    chi2(c_r, c_s) = 1/2 * sum_i (c_r(i) - c_s(i))^2 / (c_r(i) + c_s(i)),
    zero-total bins contribute 0.
    """
    r = np.asarray(real_tokens)[:, field]
    s = np.asarray(synth_tokens)[:, field]
    size = int(max(r.max(), s.max())) + 1
    if size < 1:
        raise DataError("empty field vocabulary")
    cr = _frequencies(r, size)
    cs = _frequencies(s, size)
    total = cr + cs
    mask = total > 0
    return float(0.5 * np.sum((cr[mask] - cs[mask]) ** 2 / total[mask]))


def chi_squared_mean(real_tokens, synth_tokens):
    """Mean chi-squared distance across all fields."""
    num_fields = np.asarray(real_tokens).shape[1]
    return float(
        np.mean(
            [chi_squared_per_field(real_tokens, synth_tokens, j) for j in range(num_fields)]
        )
    )


def mutual_information_matrix(tokens):
    """Plug-in MI (natural log) for all column pairs; diagonal is entropy."""
    tokens = np.asarray(tokens)
    n, num_cols = tokens.shape
    if n < 1:
        raise DataError("need at least one row")
    mi = np.zeros((num_cols, num_cols))
    sizes = tokens.max(axis=0) + 1
    marginals = [_frequencies(tokens[:, j], sizes[j]) for j in range(num_cols)]
    for i in range(num_cols):
        p = marginals[i]
        nz = p > 0
        mi[i, i] = float(-np.sum(p[nz] * np.log(p[nz])))
        for j in range(i + 1, num_cols):
            joint = np.zeros((sizes[i], sizes[j]))
            np.add.at(joint, (tokens[:, i], tokens[:, j]), 1.0)
            joint /= n
            outer = np.outer(marginals[i], marginals[j])
            mask = joint > 0
            value = float(np.sum(joint[mask] * np.log(joint[mask] / outer[mask])))
            mi[i, j] = mi[j, i] = value
    return mi


def mi_l2_difference(real_tokens, synth_tokens):
    """Frobenius norm between the real and synthetic MI matrices."""
    diff = mutual_information_matrix(real_tokens) - mutual_information_matrix(synth_tokens)
    return float(np.linalg.norm(diff))


def _snr(values_r, values_s):
    gap = abs(float(values_r.mean()) - float(values_s.mean()))
    var_r = float(values_r.var(ddof=1)) if len(values_r) > 1 else 0.0
    var_s = float(values_s.var(ddof=1)) if len(values_s) > 1 else 0.0
    pooled = np.sqrt((var_r + var_s) / 2.0)
    return gap / max(pooled, 1e-12)


def mmd_witness_snr(phi_r, phi_s, rff_map, split_seed=0, shrinkage=1e-6):
    """Fisher-discriminant MMD witness in RFF space with a 50/50 holdout.

    Returns (train_snr, test_snr, test_values_r, test_values_s); the held-out
    halves reuse the frozen witness, giving a cross-validated statistic.
    """
    zr = rff_map.transform(np.asarray(phi_r, dtype=np.float64))
    zs = rff_map.transform(np.asarray(phi_s, dtype=np.float64))
    if len(zr) < 8 or len(zs) < 8:
        raise DataError("each set needs at least 8 rows")
    rng = np.random.default_rng(split_seed)
    pr = rng.permutation(len(zr))
    ps = rng.permutation(len(zs))
    hr, hs = len(zr) // 2, len(zs) // 2
    zr_tr, zr_te = zr[pr[:hr]], zr[pr[hr:]]
    zs_tr, zs_te = zs[ps[:hs]], zs[ps[hs:]]

    mu_r = zr_tr.mean(axis=0)
    mu_s = zs_tr.mean(axis=0)
    centered = np.vstack([zr_tr - mu_r, zs_tr - mu_s])
    cov = centered.T @ centered / max(len(centered) - 2, 1)
    cov[np.diag_indices_from(cov)] += shrinkage
    w = np.linalg.solve(cov, mu_r - mu_s)

    train_snr = _snr(zr_tr @ w, zs_tr @ w)
    vr, vs = zr_te @ w, zs_te @ w
    return train_snr, _snr(vr, vs), vr, vs


def mmd_permutation_pvalue(test_values_r, test_values_s, permutations=200, seed=0):
    """p = (1 + #{permuted SNR >= observed}) / (1 + permutations)."""
    if permutations < 1:
        raise DataError("permutations must be >= 1")
    observed = _snr(test_values_r, test_values_s)
    pooled = np.concatenate([test_values_r, test_values_s])
    n_r = len(test_values_r)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        perm = rng.permutation(len(pooled))
        if _snr(pooled[perm[:n_r]], pooled[perm[n_r:]]) >= observed:
            hits += 1
    return (1 + hits) / (1 + permutations)


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(phi_r, phi_s, shrinkage=1e-6):
    """Frechet distance between Gaussian fits of the two feature sets."""
    phi_r = np.atleast_2d(np.asarray(phi_r, dtype=np.float64))
    phi_s = np.atleast_2d(np.asarray(phi_s, dtype=np.float64))
    if len(phi_r) < 2 or len(phi_s) < 2:
        raise DataError("each set needs at least 2 rows")
    mu_r, mu_s = phi_r.mean(axis=0), phi_s.mean(axis=0)
    cov_r = np.cov(phi_r, rowvar=False).reshape(phi_r.shape[1], -1)
    cov_s = np.cov(phi_s, rowvar=False).reshape(phi_s.shape[1], -1)
    cov_r[np.diag_indices_from(cov_r)] += shrinkage
    cov_s[np.diag_indices_from(cov_s)] += shrinkage
    sqrt_r = _psd_sqrt(cov_r)
    inner = sqrt_r @ cov_s @ sqrt_r
    vals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
    trace_term = float(np.trace(cov_r) + np.trace(cov_s) - 2.0 * np.sum(np.sqrt(vals)))
    return float(np.sum((mu_r - mu_s) ** 2)) + trace_term


def _pairwise_distances(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.maximum(sq, 0.0))


def _knn_radii(points, k):
    """Distance to the k-th nearest neighbor within the set, excluding self."""
    dists = _pairwise_distances(points, points)
    np.fill_diagonal(dists, np.inf)
    return np.sort(dists, axis=1)[:, k - 1]


def knn_precision_recall(phi_r, phi_s, k=3):
    """Improved precision/recall via kNN manifold radii."""
    phi_r = np.asarray(phi_r, dtype=np.float64)
    phi_s = np.asarray(phi_s, dtype=np.float64)
    if len(phi_r) <= k or len(phi_s) <= k:
        raise DataError(f"each set needs more than k={k} rows")
    radii_r = _knn_radii(phi_r, k)
    radii_s = _knn_radii(phi_s, k)
    d_sr = _pairwise_distances(phi_s, phi_r)
    precision = float(np.mean(np.any(d_sr <= radii_r[None, :], axis=1)))
    d_rs = d_sr.T
    recall = float(np.mean(np.any(d_rs <= radii_s[None, :], axis=1)))
    return precision, recall
