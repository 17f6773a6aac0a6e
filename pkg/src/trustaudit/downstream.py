"""Downstream classifiers, utility/fairness scores and the greedy attack."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataError


class DegenerateGroupError(DataError):
    """A fairness group lacks positive or negative ground-truth rows."""


@dataclass
class ClassifierSpec:
    kind: str = "logistic_regression"
    learning_rate: float = 3e-4
    hidden_size: int = 64
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    k: int = 1
    regularization: float = 1e-4
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic_regression", "knn", "mlp"):
            raise DataError(f"unknown classifier kind {self.kind!r}")
        for name in ("learning_rate", "hidden_size", "batch_size", "max_epochs",
                     "patience", "k", "max_iter"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")


@dataclass
class PredictionSet:
    pred_labels: np.ndarray
    scores: np.ndarray
    true_labels: np.ndarray
    protected: np.ndarray  # 1 = privileged group

    def __post_init__(self):
        n = len(self.true_labels)
        if not (len(self.pred_labels) == len(self.scores) == len(self.protected) == n):
            raise DataError("misaligned prediction set")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticRegressionClassifier:
    """L2-regularized logistic regression fit by full-batch gradient descent."""

    def __init__(self, spec=None):
        self.spec = spec or ClassifierSpec(kind="logistic_regression")
        self.weights_ = None
        self.bias_ = 0.0

    def get_params(self, deep=True):
        return {"spec": self.spec}

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(np.unique(y)) < 2:
            raise DataError("need at least 2 classes")
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        lam = self.spec.regularization
        lr = 1.0  # features are standardized upstream; unit step is stable
        for _ in range(self.spec.max_iter):
            p = _sigmoid(X @ w + b)
            grad_w = X.T @ (p - y) / n + lam * w
            grad_b = float(np.mean(p - y))
            if math.sqrt(float(grad_w @ grad_w) + grad_b**2) <= 1e-6:
                break
            w -= lr * grad_w
            b -= lr * grad_b
        self.weights_, self.bias_ = w, b
        return self

    def predict_proba(self, X):
        return _sigmoid(np.asarray(X, dtype=np.float64) @ self.weights_ + self.bias_)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


class KNNClassifier:
    """1-NN Euclidean classifier; distance ties go to the lowest training index."""

    def __init__(self, spec=None):
        self.spec = spec or ClassifierSpec(kind="knn")
        self.points_ = None
        self.labels_ = None

    def get_params(self, deep=True):
        return {"spec": self.spec}

    def fit(self, X, y):
        self.points_ = np.asarray(X, dtype=np.float64)
        self.labels_ = np.asarray(y, dtype=np.int64)
        if len(self.points_) == 0:
            raise DataError("empty training set")
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(self.points_ * self.points_, axis=1)[None, :]
            - 2.0 * (X @ self.points_.T)
        )
        return self.labels_[np.argmin(sq, axis=1)]

    def predict_proba(self, X):
        return self.predict(X).astype(np.float64)


def knn_classify(train_points, train_labels, query_points, k=1):
    if k != 1:
        raise DataError("only 1-NN classification is supported")
    clf = KNNClassifier().fit(train_points, train_labels)
    return clf.predict(query_points)


def _init_mlp_params(d, h, seed):
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.standard_normal((d, h)) * np.sqrt(2.0 / d),
        "b1": np.zeros(h),
        "gamma": np.ones(h),
        "beta": np.zeros(h),
        "W2": rng.standard_normal((h, 1)) * np.sqrt(2.0 / h),
        "b2": np.zeros(1),
    }


def mlp_forward_backward(params, X, y, eps=1e-5):
    """Binary cross-entropy loss and analytic gradients (train-mode batchnorm).

    Returns (loss, grads, batch_mean, batch_var).
    """
    n = X.shape[0]
    z1 = X @ params["W1"] + params["b1"]
    mu = z1.mean(axis=0)
    var = z1.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    z_hat = (z1 - mu) * inv_std
    bn = params["gamma"] * z_hat + params["beta"]
    a = np.maximum(bn, 0.0)
    logits = (a @ params["W2"] + params["b2"]).ravel()
    p = _sigmoid(logits)
    loss = float(
        -np.mean(y * np.log(np.clip(p, 1e-12, 1)) + (1 - y) * np.log(np.clip(1 - p, 1e-12, 1)))
    )

    dlogits = (p - y) / n
    grads = {
        "W2": a.T @ dlogits[:, None],
        "b2": np.array([dlogits.sum()]),
    }
    da = dlogits[:, None] @ params["W2"].T
    dbn = da * (bn > 0)
    grads["gamma"] = np.sum(dbn * z_hat, axis=0)
    grads["beta"] = np.sum(dbn, axis=0)
    dz_hat = dbn * params["gamma"]
    dz1 = inv_std / n * (
        n * dz_hat - dz_hat.sum(axis=0) - z_hat * np.sum(dz_hat * z_hat, axis=0)
    )
    grads["W1"] = X.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads, mu, var


class MLPClassifier:
    """2-layer MLP: linear -> batchnorm -> ReLU -> linear, Adam optimizer.

    Early stopping on validation F1 with the configured patience; the returned
    parameters are the best-validation-F1 snapshot. Evaluation uses running
    batchnorm statistics (momentum 0.9).
    """

    BN_EPS = 1e-5
    BN_MOMENTUM = 0.9

    def __init__(self, spec=None):
        self.spec = spec or ClassifierSpec(kind="mlp")
        self.params_ = None
        self.running_mean_ = None
        self.running_var_ = None
        self.best_val_f1_ = None

    def get_params(self, deep=True):
        return {"spec": self.spec}

    def fit(self, X, y, X_val, y_val):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise DataError("need at least 2 classes")
        if len(X_val) == 0:
            raise DataError("empty validation set")
        spec = self.spec
        params = _init_mlp_params(X.shape[1], spec.hidden_size, spec.seed)
        rng = np.random.default_rng(spec.seed + 1)
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v = {k: np.zeros_like(val) for k, val in params.items()}
        run_mean = np.zeros(spec.hidden_size)
        run_var = np.ones(spec.hidden_size)
        beta1, beta2, adam_eps, step = 0.9, 0.999, 1e-8, 0

        best = None
        best_f1 = -1.0
        stale = 0
        for _ in range(spec.max_epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), spec.batch_size):
                batch = order[start : start + spec.batch_size]
                if len(batch) < 2:
                    continue  # batchnorm needs batch statistics
                _, grads, mu, var_b = mlp_forward_backward(
                    params, X[batch], y[batch], self.BN_EPS
                )
                run_mean = self.BN_MOMENTUM * run_mean + (1 - self.BN_MOMENTUM) * mu
                run_var = self.BN_MOMENTUM * run_var + (1 - self.BN_MOMENTUM) * var_b
                step += 1
                for key in params:
                    g = grads[key].reshape(params[key].shape)
                    m[key] = beta1 * m[key] + (1 - beta1) * g
                    v[key] = beta2 * v[key] + (1 - beta2) * g * g
                    m_hat = m[key] / (1 - beta1**step)
                    v_hat = v[key] / (1 - beta2**step)
                    params[key] -= spec.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)

            val_pred = self._predict_with(params, run_mean, run_var, X_val)
            f1 = classification_scores_from_labels(y_val, val_pred)["f1"]
            if f1 > best_f1:
                best_f1 = f1
                best = (
                    {k: p.copy() for k, p in params.items()},
                    run_mean.copy(),
                    run_var.copy(),
                )
                stale = 0
            else:
                stale += 1
                if stale >= spec.patience:
                    break
        self.params_, self.running_mean_, self.running_var_ = best
        self.best_val_f1_ = best_f1
        return self

    def _predict_with(self, params, run_mean, run_var, X):
        return (self._proba_with(params, run_mean, run_var, X) >= 0.5).astype(np.int64)

    def _proba_with(self, params, run_mean, run_var, X):
        z1 = np.asarray(X, dtype=np.float64) @ params["W1"] + params["b1"]
        z_hat = (z1 - run_mean) / np.sqrt(run_var + self.BN_EPS)
        a = np.maximum(params["gamma"] * z_hat + params["beta"], 0.0)
        return _sigmoid((a @ params["W2"] + params["b2"]).ravel())

    def predict_proba(self, X):
        return self._proba_with(self.params_, self.running_mean_, self.running_var_, X)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def train_logistic_regression(X, y, spec=None):
    return LogisticRegressionClassifier(spec).fit(X, y)


def train_mlp(X, y, X_val, y_val, spec=None):
    return MLPClassifier(spec).fit(X, y, X_val, y_val)


def classification_scores_from_labels(true_labels, pred_labels):
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    tp = int(np.sum((pred_labels == 1) & (true_labels == 1)))
    fp = int(np.sum((pred_labels == 1) & (true_labels == 0)))
    fn = int(np.sum((pred_labels == 0) & (true_labels == 1)))
    tn = int(np.sum((pred_labels == 0) & (true_labels == 0)))
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}


def classification_scores(pred):
    if len(pred.true_labels) == 0:
        raise DataError("empty prediction set")
    return classification_scores_from_labels(pred.true_labels, pred.pred_labels)


def _rates(true_labels, pred_labels):
    positives = true_labels == 1
    negatives = true_labels == 0
    tpr = float(np.mean(pred_labels[positives] == 1))
    fpr = float(np.mean(pred_labels[negatives] == 1))
    return tpr, fpr


def fairness_metrics(pred):
    """EOD, AOD and equalized odds (absolute values) across protected groups."""
    true_labels = np.asarray(pred.true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred.pred_labels, dtype=np.int64)
    protected = np.asarray(pred.protected, dtype=np.int64)
    for group in (1, 0):
        y_g = true_labels[protected == group]
        if np.sum(y_g == 1) == 0 or np.sum(y_g == 0) == 0:
            raise DegenerateGroupError(
                f"group {'privileged' if group else 'unprivileged'} lacks both label classes"
            )
    tpr_p, fpr_p = _rates(true_labels[protected == 1], pred_labels[protected == 1])
    tpr_u, fpr_u = _rates(true_labels[protected == 0], pred_labels[protected == 0])
    d_tpr = tpr_p - tpr_u
    d_fpr = fpr_p - fpr_u
    return {
        "eod": abs(d_tpr),
        "aod": abs(0.5 * (d_tpr + d_fpr)),
        "eq_odds": max(abs(d_tpr), abs(d_fpr)),
    }


@dataclass
class AttackConfig:
    n_candidates: int = 5
    budget_ratio: float = 0.3
    order_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.budget_ratio <= 1):
            raise DataError("budget_ratio must be in [0, 1]")
        if self.n_candidates < 1:
            raise DataError("n_candidates must be >= 1")


def build_token_embeddings(quantizer, real_tokens):
    """Per-field token embedding vectors used for attack candidate search.

    Numeric tokens embed as their 1-D bin centers. Categorical tokens embed as
    their co-occurrence frequency profile with all other fields' tokens on
    real training data.
    """
    real_tokens = np.asarray(real_tokens)
    fields = quantizer.columns_
    sizes = [quantizer.vocab_size(name) for name in fields]
    embeddings = []
    for j, name in enumerate(fields):
        if name in quantizer.edges_:
            centers = np.asarray(quantizer.token_values(name), dtype=np.float64)
            embeddings.append(centers[:, None])
            continue
        other_dims = sum(sizes[jj] for jj in range(len(fields)) if jj != j)
        profile = np.zeros((sizes[j], other_dims))
        counts = np.zeros(sizes[j])
        offsets = np.cumsum([0] + [sizes[jj] for jj in range(len(fields)) if jj != j])
        for i in range(real_tokens.shape[0]):
            t = real_tokens[i, j]
            counts[t] += 1
            pos = 0
            for jj in range(len(fields)):
                if jj == j:
                    continue
                profile[t, offsets[pos] + real_tokens[i, jj]] += 1
                pos += 1
        nz = counts > 0
        profile[nz] /= counts[nz][:, None]
        embeddings.append(profile)
    return embeddings


def _cosine_candidates(vectors, token, n_candidates):
    """Token ids closest to `token` by cosine similarity, excluding itself."""
    ref = vectors[token]
    norms = np.linalg.norm(vectors, axis=1) * max(np.linalg.norm(ref), 1e-300)
    sims = np.zeros(len(vectors))
    nz = norms > 0
    sims[nz] = (vectors @ ref)[nz] / norms[nz]
    order = sorted(
        (t for t in range(len(vectors)) if t != token),
        key=lambda t: (-sims[t], t),
    )
    return order[:n_candidates]


def greedy_substitution_attack(loss_fn, tokens_row, token_embeddings, cfg,
                               attackable_fields=None):
    """Greedy token substitution maximizing classification loss under a budget.

    `loss_fn` maps a token row to the cross-entropy loss of the attacked
    classifier w.r.t. the true label. Fields are visited in a seeded random
    order; per field the closest candidate tokens by embedding cosine
    similarity are tried and a substitution is kept only if it strictly
    increases the loss. At most floor(budget_ratio * num_fields)
    substitutions are made.
    """
    tokens_row = np.asarray(tokens_row, dtype=np.int64).copy()
    if attackable_fields is None:
        attackable_fields = list(range(len(tokens_row)))
    max_subs = int(math.floor(cfg.budget_ratio * len(attackable_fields)))
    if max_subs == 0:
        return tokens_row
    order = np.random.default_rng(cfg.order_seed).permutation(len(attackable_fields))
    current_loss = loss_fn(tokens_row)
    substitutions = 0
    for pos in order:
        if substitutions >= max_subs:
            break
        j = attackable_fields[pos]
        candidates = _cosine_candidates(
            token_embeddings[j], tokens_row[j], cfg.n_candidates
        )
        best_token, best_loss = None, current_loss
        for t in candidates:
            trial = tokens_row.copy()
            trial[j] = t
            loss = loss_fn(trial)
            if loss > best_loss:
                best_token, best_loss = t, loss
        if best_token is not None:
            tokens_row[j] = best_token
            current_loss = best_loss
            substitutions += 1
    return tokens_row


def cross_entropy_loss(prob_positive, true_label):
    p = min(max(prob_positive, 1e-12), 1 - 1e-12)
    return -math.log(p) if true_label == 1 else -math.log(1 - p)


def robustness_metrics(clean, adversarial):
    """Adversarial scores plus absolute clean-vs-adversarial differences."""
    if len(clean.true_labels) != len(adversarial.true_labels):
        raise DataError("misaligned prediction sets")
    clean_scores = classification_scores(clean)
    adv_scores = classification_scores(adversarial)
    out = {f"adv_{k}": v for k, v in adv_scores.items()}
    for k in clean_scores:
        out[f"adv_{k}_delta"] = abs(clean_scores[k] - adv_scores[k])
    return out
