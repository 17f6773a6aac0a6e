"""Audit orchestration, report assembly and rendering."""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .aggregation import (
    DIMENSIONS,
    MetricPool,
    MetricRecord,
    TrustProfile,
    dimension_index,
    geo_mean_deviation,
    preset_profiles,
    rank_with_uncertainty,
    trustworthiness_index,
)
from .data import (
    DataError,
    DatasetSchema,
    Origin,
    Quantizer,
    TabularDataset,
    load_csv,
    split_folds,
)
from .downstream import (
    AttackConfig,
    ClassifierSpec,
    DegenerateGroupError,
    KNNClassifier,
    LogisticRegressionClassifier,
    MLPClassifier,
    PredictionSet,
    build_token_embeddings,
    classification_scores,
    cross_entropy_loss,
    fairness_metrics,
    greedy_substitution_attack,
    robustness_metrics,
)
from .embedding import Embedder, RFFMap, anova_f_select, median_heuristic_bandwidth
from .fidelity import (
    chi_squared_mean,
    frechet_distance,
    knn_precision_recall,
    mi_l2_difference,
    mmd_permutation_pvalue,
    mmd_witness_snr,
)
from .privacy import hamming_distances, knn_distance_stats, replicated_rows
from .synthgen import iterative_retrain


DEFAULT_WARNING_THRESHOLDS = {
    "replicated_rows": 0,
    "privacy_index": 0.2,
    "fairness_index": 0.2,
}


class AuditError(RuntimeError):
    """Stage failure; carries the stage name and cause."""

    def __init__(self, stage, cause):
        super().__init__(f"audit stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class WarningMessage:
    code: str
    severity: str  # info | warn | fail
    text: str
    metric: str = ""
    threshold: float | int | None = None

    def to_json(self):
        return {
            "code": self.code,
            "severity": self.severity,
            "text": self.text,
            "metric": self.metric,
            "threshold": self.threshold,
        }


@dataclass
class AuditConfig:
    real_csv: str
    schema_path: str
    synthetic: list  # list of {"id", "csv"}
    bins: int = 10
    num_folds: int = 5
    ratios: tuple = (0.8, 0.1, 0.1)
    base_seed: int = 7
    rff_features: int = 512
    rff_seed: int = 0
    permutations: int = 200
    knn_k: int = 3
    max_metric_rows: int = 1000
    mlp_seeds: tuple = (0,)
    mlp_max_epochs: int = 30
    classifier_kinds: tuple = ("logistic_regression", "knn", "mlp")
    feature_select_k: int = 100
    attack_classifier: str = "logistic_regression"
    attack_sample_size: int = 64
    attack_candidates: int = 5
    attack_budget: float = 0.3
    dimensions: tuple = DIMENSIONS
    profiles: list = field(default_factory=preset_profiles)
    alpha: float = 0.0
    warning_thresholds: dict = field(
        default_factory=lambda: dict(DEFAULT_WARNING_THRESHOLDS)
    )
    workers: int = 4

    @classmethod
    def from_json(cls, obj, base_dir="."):
        def _path(p):
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        data = obj.get("data", {})
        folds = obj.get("folds", {})
        metrics = obj.get("metrics", {})
        attack = metrics.get("attack", {})
        profiles_obj = obj.get("profiles")
        if profiles_obj:
            profiles = [
                TrustProfile.from_raw(name, raw) for name, raw in profiles_obj.items()
            ]
        else:
            profiles = preset_profiles()
        return cls(
            real_csv=_path(data["real_csv"]),
            schema_path=_path(data["schema"]),
            synthetic=[
                {"id": s["id"], "csv": _path(s["csv"])} for s in data.get("synthetic", [])
            ],
            bins=data.get("bins", 10),
            num_folds=folds.get("num_folds", 5),
            ratios=tuple(folds.get("ratios", (0.8, 0.1, 0.1))),
            base_seed=folds.get("base_seed", 7),
            rff_features=metrics.get("rff_features", 512),
            rff_seed=metrics.get("rff_seed", 0),
            permutations=metrics.get("permutations", 200),
            knn_k=metrics.get("knn_k", 3),
            max_metric_rows=metrics.get("max_metric_rows", 1000),
            mlp_seeds=tuple(metrics.get("mlp_seeds", (0,))),
            mlp_max_epochs=metrics.get("mlp_max_epochs", 30),
            classifier_kinds=tuple(
                metrics.get("classifiers", ("logistic_regression", "knn", "mlp"))
            ),
            feature_select_k=metrics.get("feature_select_k", 100),
            attack_classifier=attack.get("classifier", "logistic_regression"),
            attack_sample_size=attack.get("sample_size", 64),
            attack_candidates=attack.get("n_candidates", 5),
            attack_budget=attack.get("budget_ratio", 0.3),
            dimensions=tuple(metrics.get("dimensions", DIMENSIONS)),
            profiles=profiles,
            alpha=obj.get("ranking", {}).get("alpha", 0.0),
            warning_thresholds={
                **DEFAULT_WARNING_THRESHOLDS,
                **obj.get("warnings", {}),
            },
            workers=obj.get("workers", 4),
        )


@dataclass
class FoldContext:
    """Shared per-fold state: real splits, quantizer, embedder, attack geometry."""

    fold_id: int
    real_train: TabularDataset
    real_val: TabularDataset
    real_test: TabularDataset
    quantizer: Quantizer
    embedder: Embedder
    train_tokens: np.ndarray
    token_embeddings: list
    label_classes: list

    @classmethod
    def build(cls, real, fold, cfg):
        real_train = real.subset(fold.train)
        real_val = real.subset(fold.val)
        real_test = real.subset(fold.test)
        quantizer = Quantizer(bins=cfg.bins).fit(real_train)
        embedder = Embedder().fit(real_train)
        train_tokens = quantizer.transform(real_train)
        needs_attack = "robustness" in cfg.dimensions
        token_embeddings = (
            build_token_embeddings(quantizer, train_tokens) if needs_attack else None
        )
        classes = sorted(set(real.column(real.schema.target).tolist()))
        if len(classes) != 2:
            raise DataError("downstream tasks require a binary target")
        return cls(
            fold_id=fold.fold_id,
            real_train=real_train,
            real_val=real_val,
            real_test=real_test,
            quantizer=quantizer,
            embedder=embedder,
            train_tokens=train_tokens,
            token_embeddings=token_embeddings,
            label_classes=classes,
        )

    def labels(self, data):
        # positive class = lexicographically larger target category
        positive = self.label_classes[1]
        return (data.column(data.schema.target) == positive).astype(np.int64)

    def protected_indicator(self, data):
        schema = data.schema
        return (
            data.column(schema.protected).astype(str) == schema.privileged_value
        ).astype(np.int64)


def _subsample(matrix, limit, seed):
    if matrix.shape[0] <= limit:
        return matrix
    idx = np.random.default_rng(seed).choice(matrix.shape[0], limit, replace=False)
    return matrix[np.sort(idx)]


class TokenRowEmbedder:
    """Fast token-row -> feature-vector decode+embed path for the attack."""

    def __init__(self, ctx):
        quantizer, embedder = ctx.quantizer, ctx.embedder
        self.fields = quantizer.columns_
        self.blocks = []  # per quantizer field: (offset known via concat) matrix token -> features
        for name in self.fields:
            if name not in embedder.feature_columns_:
                self.blocks.append(None)
                continue
            values = quantizer.token_values(name)
            if name in embedder.cont_stats_:
                mean, std = embedder.cont_stats_[name]
                col = np.asarray(values, dtype=np.float64)
                block = ((col - mean) / std if std > 0 else np.zeros_like(col))[:, None]
            else:
                vocab = embedder.cat_vocab_[name]
                lookup = {c: i for i, c in enumerate(vocab)}
                block = np.zeros((len(values), len(vocab)))
                for t, v in enumerate(values):
                    j = lookup.get(v)
                    if j is not None:
                        block[t, j] = 1.0
            self.blocks.append(block)

    def embed_row(self, tokens_row):
        parts = []
        for j, block in enumerate(self.blocks):
            if block is not None:
                parts.append(block[tokens_row[j]])
        return np.concatenate(parts)


def _fit_classifier(kind, ctx, cfg, X_train, y_train, seed=0):
    if kind == "logistic_regression":
        selected = anova_f_select(
            X_train, y_train, min(cfg.feature_select_k, X_train.shape[1])
        )
        clf = LogisticRegressionClassifier(
            ClassifierSpec(kind="logistic_regression", seed=seed)
        ).fit(X_train[:, selected], y_train)
        return clf, selected
    if kind == "knn":
        return KNNClassifier(ClassifierSpec(kind="knn", seed=seed)).fit(
            X_train, y_train
        ), None
    if kind == "mlp":
        X_val = ctx.embedder.transform(ctx.real_val)
        y_val = ctx.labels(ctx.real_val)
        spec = ClassifierSpec(kind="mlp", seed=seed, max_epochs=cfg.mlp_max_epochs)
        return MLPClassifier(spec).fit(X_train, y_train, X_val, y_val), None
    raise DataError(f"unknown classifier kind {kind!r}")


def _predict(clf, selected, X):
    if selected is not None:
        X = X[:, selected]
    return clf.predict(X), (
        clf.predict_proba(X) if hasattr(clf, "predict_proba") else None
    )


def compute_fidelity_records(ctx, synth, dataset_id, cfg):
    records, extras = [], {}
    synth_tokens = ctx.quantizer.transform(synth)
    rec = lambda name, pol, val: records.append(
        MetricRecord(name, "fidelity", pol, val, dataset_id=dataset_id,
                     model_id=dataset_id, fold_id=ctx.fold_id, split="none")
    )
    rec("chi_squared", -1, chi_squared_mean(ctx.train_tokens, synth_tokens))
    rec("mi_l2", -1, mi_l2_difference(ctx.train_tokens, synth_tokens))

    phi_r = ctx.embedder.transform(ctx.real_train)
    phi_s = ctx.embedder.transform(synth)
    seed = ctx.fold_id * 7919 + cfg.rff_seed
    phi_r_s = _subsample(phi_r, cfg.max_metric_rows, seed)
    phi_s_s = _subsample(phi_s, cfg.max_metric_rows, seed + 1)
    pooled = np.vstack([phi_r_s, phi_s_s])
    bandwidth = median_heuristic_bandwidth(pooled, subsample=500, seed=seed)
    rff = RFFMap(phi_r.shape[1], cfg.rff_features, bandwidth, seed=cfg.rff_seed)
    _, test_snr, vals_r, vals_s = mmd_witness_snr(phi_r_s, phi_s_s, rff, split_seed=seed)
    rec("mmd_snr", -1, test_snr)
    rec(
        "mmd_pvalue",
        1,
        mmd_permutation_pvalue(vals_r, vals_s, cfg.permutations, seed=seed),
    )
    rec("frechet", -1, frechet_distance(phi_r_s, phi_s_s))
    precision, recall = knn_precision_recall(phi_r_s, phi_s_s, k=cfg.knn_k)
    rec("knn_precision", 1, precision)
    rec("knn_recall", 1, recall)
    return records, extras


def compute_privacy_records(ctx, synth, dataset_id, cfg):
    records, extras = [], {}
    rec = lambda name, pol, val: records.append(
        MetricRecord(name, "privacy", pol, val, dataset_id=dataset_id,
                     model_id=dataset_id, fold_id=ctx.fold_id, split="none")
    )
    replicated = replicated_rows(ctx.real_train, synth)
    rec("replicated_rows", -1, float(replicated))
    extras["replicated_rows"] = replicated

    seed = ctx.fold_id * 104729
    synth_tokens = ctx.quantizer.transform(synth)
    q_tokens = _subsample(synth_tokens, cfg.max_metric_rows, seed)
    raw_stats = knn_distance_stats(
        None, None, distances=hamming_distances(ctx.train_tokens, q_tokens)
    )
    phi_r = ctx.embedder.transform(ctx.real_train)
    phi_s = _subsample(ctx.embedder.transform(synth), cfg.max_metric_rows, seed)
    emb_stats = knn_distance_stats(phi_r, phi_s)
    for space, stats in (("raw", raw_stats), ("emb", emb_stats)):
        for k, st in stats.items():
            rec(f"knn_{space}_k{k}_mean", 1, st["mean"])
            rec(f"knn_{space}_k{k}_median", 1, st["median"])
            extras[f"knn_{space}_k{k}_std"] = st["std"]
            extras[f"knn_{space}_k{k}_mode"] = st["mode"]
    return records, extras


def compute_downstream_records(ctx, synth, dataset_id, cfg):
    """Utility, fairness and robustness records for one synthetic dataset."""
    records, extras, warnings = [], {}, []
    X_train = ctx.embedder.transform(synth)
    y_train = ctx.labels(synth)
    X_test = ctx.embedder.transform(ctx.real_test)
    y_test = ctx.labels(ctx.real_test)
    protected = ctx.protected_indicator(ctx.real_test)

    def add(metric, dim, pol, value, seed=-1):
        records.append(
            MetricRecord(metric, dim, pol, value, dataset_id=dataset_id,
                         model_id=dataset_id, fold_id=ctx.fold_id,
                         classifier_seed=seed, split="test")
        )

    attack_clf = None
    attack_selected = None
    for kind in cfg.classifier_kinds:
        seeds = cfg.mlp_seeds if kind == "mlp" else (0,)
        for seed in seeds:
            tag = f"{kind}_s{seed}" if kind == "mlp" and len(seeds) > 1 else kind
            try:
                clf, selected = _fit_classifier(kind, ctx, cfg, X_train, y_train, seed)
            except DataError as exc:
                warnings.append(
                    WarningMessage(
                        "classifier_failed", "warn",
                        f"{tag} on {dataset_id}: {exc}; utility metrics missing",
                    )
                )
                for score in ("accuracy", "precision", "recall", "f1"):
                    add(f"{tag}_{score}", "utility", 1, None, seed)
                continue
            pred_labels, _ = _predict(clf, selected, X_test)
            pred = PredictionSet(pred_labels, pred_labels.astype(float), y_test, protected)
            if "utility" in cfg.dimensions:
                for score, value in classification_scores(pred).items():
                    add(f"{tag}_{score}", "utility", 1, value, seed)
            if "fairness" in cfg.dimensions:
                try:
                    for name, value in fairness_metrics(pred).items():
                        add(f"{tag}_{name}", "fairness", -1, value, seed)
                except DegenerateGroupError as exc:
                    warnings.append(
                        WarningMessage(
                            "degenerate_fairness_group", "info",
                            f"{tag} on {dataset_id}: {exc}; fairness metrics missing",
                        )
                    )
                    for name in ("eod", "aod", "eq_odds"):
                        add(f"{tag}_{name}", "fairness", -1, None, seed)
            if kind == cfg.attack_classifier and attack_clf is None:
                attack_clf, attack_selected = clf, selected

    if "robustness" in cfg.dimensions and attack_clf is not None:
        rob = _robustness_records(ctx, cfg, attack_clf, attack_selected)
        for name, (pol, value) in rob.items():
            add(f"{cfg.attack_classifier}_{name}", "robustness", pol, value)
    return records, extras, warnings


def _robustness_records(ctx, cfg, clf, selected):
    row_embedder = TokenRowEmbedder(ctx)
    test_tokens = ctx.quantizer.transform(ctx.real_test)
    y_test = ctx.labels(ctx.real_test)
    protected = ctx.protected_indicator(ctx.real_test)
    n = len(test_tokens)
    seed = ctx.fold_id * 15485863
    take = min(cfg.attack_sample_size, n)
    idx = np.sort(np.random.default_rng(seed).choice(n, take, replace=False))

    target_field = ctx.quantizer.columns_.index(ctx.real_test.schema.target)
    attackable = [
        j for j, name in enumerate(ctx.quantizer.columns_)
        if name != ctx.real_test.schema.target
    ]

    def predict_prob(tokens_row):
        x = row_embedder.embed_row(tokens_row)
        if selected is not None:
            x = x[selected]
        if hasattr(clf, "predict_proba"):
            return float(np.atleast_1d(clf.predict_proba(x[None, :]))[0])
        return float(clf.predict(x[None, :])[0])

    clean_labels, adv_labels = [], []
    attack_cfg = AttackConfig(
        n_candidates=cfg.attack_candidates,
        budget_ratio=cfg.attack_budget,
        order_seed=seed + 1,
    )
    for i in idx:
        row = test_tokens[i].copy()
        label = int(y_test[i])
        loss_fn = lambda tokens: cross_entropy_loss(predict_prob(tokens), label)
        clean_labels.append(int(predict_prob(row) >= 0.5))
        perturbed = greedy_substitution_attack(
            loss_fn, row, ctx.token_embeddings, attack_cfg, attackable_fields=attackable
        )
        adv_labels.append(int(predict_prob(perturbed) >= 0.5))

    y = y_test[idx]
    prot = protected[idx]
    clean = PredictionSet(np.asarray(clean_labels), np.asarray(clean_labels, float), y, prot)
    adv = PredictionSet(np.asarray(adv_labels), np.asarray(adv_labels, float), y, prot)
    out = {}
    for name, value in robustness_metrics(clean, adv).items():
        out[name] = ((1, value) if not name.endswith("_delta") else (-1, value))
    return out


def compute_metric_records(ctx, synth, dataset_id, cfg):
    """All metric records for one (synthetic dataset, fold) pair."""
    records, extras, warnings = [], {}, []
    if "fidelity" in cfg.dimensions:
        r, e = compute_fidelity_records(ctx, synth, dataset_id, cfg)
        records += r
        extras.update(e)
    if "privacy" in cfg.dimensions:
        r, e = compute_privacy_records(ctx, synth, dataset_id, cfg)
        records += r
        extras.update(e)
    if set(cfg.dimensions) & {"utility", "fairness", "robustness"}:
        r, e, w = compute_downstream_records(ctx, synth, dataset_id, cfg)
        records += r
        extras.update(e)
        warnings += w
    return records, extras, warnings


@dataclass
class AuditReport:
    metadata: dict
    profiles: list  # TrustProfile
    rankings: dict  # profile name -> list of entry dicts
    dimension_tables: dict  # dataset id -> dimension -> {"mean", "delta", "display"}
    records: list  # MetricRecord
    extras: dict  # (dataset id, fold) -> report-only values
    warnings: list  # WarningMessage

    def to_json(self):
        return {
            "metadata": self.metadata,
            "profiles": {
                p.name: {
                    "weights": list(p.weights),
                    "raw": list(p.raw) if p.raw else list(p.weights),
                }
                for p in self.profiles
            },
            "rankings": self.rankings,
            "dimension_tables": self.dimension_tables,
            "metric_breakdown": [r.to_json() for r in self.records],
            "extras": {f"{ds}/fold{fold}": v for (ds, fold), v in sorted(self.extras.items())},
            "warnings": [w.to_json() for w in self.warnings],
        }


def _config_digest(obj):
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]


def aggregate_records(records, profiles, alpha, dimensions=DIMENSIONS):
    """Pool -> per-(dataset, fold) indices -> per-profile ranked lists."""
    pool = MetricPool()
    for rec in records:
        pool.add(rec)
    pool.freeze()

    by_item = {}
    for rec in records:
        by_item.setdefault((rec.dataset_id, rec.fold_id), []).append(rec)

    fold_indices = {}  # (dataset, fold) -> {dim: pi}
    for key, recs in sorted(by_item.items()):
        by_dim = {}
        for rec in recs:
            by_dim.setdefault(rec.dimension, []).append(rec)
        indices = {}
        for dim in dimensions:
            if dim not in by_dim:
                continue
            u_values = []
            for rec in by_dim[dim]:
                aligned = rec.aligned()
                u_values.append(
                    None if aligned is None else pool.ecdf(rec.metric, aligned)
                )
            indices[dim] = dimension_index(u_values)
        fold_indices[key] = indices

    datasets = sorted({ds for ds, _ in fold_indices})
    dim_tables = {}
    for ds in datasets:
        per_dim = {}
        for dim in dimensions:
            values = [
                idxs[dim]
                for (d, _), idxs in sorted(fold_indices.items())
                if d == ds and dim in idxs
            ]
            if not values:
                continue
            mean, delta = geo_mean_deviation(values)
            per_dim[dim] = {
                "mean": mean,
                "delta": delta,
                "display": f"{mean:.2f} ({delta:.2f})",
                "per_fold": values,
            }
        dim_tables[ds] = per_dim

    rankings = {}
    for profile in profiles:
        per_model = {}
        tau_folds = {}
        for ds in datasets:
            taus = []
            for (d, _), idxs in sorted(fold_indices.items()):
                if d == ds:
                    taus.append(trustworthiness_index(idxs, profile))
            tau_folds[ds] = taus
            per_model[ds] = geo_mean_deviation(taus)
        entries = rank_with_uncertainty(per_model, alpha)
        rankings[profile.name] = [
            {
                "rank": i + 1,
                "model_id": e.model_id,
                "tau_mean": round(e.tau_mean, 4),
                "tau_delta": round(e.tau_delta, 4),
                "score": round(e.score, 4),
                "display": f"{e.tau_mean:.2f} ({e.tau_delta:.2f})",
                "dimensions": {
                    dim: dim_tables[e.model_id][dim]["display"]
                    for dim in dimensions
                    if dim in dim_tables[e.model_id]
                },
                "tau_per_fold": tau_folds[e.model_id],
            }
            for i, e in enumerate(entries)
        ]
    return rankings, dim_tables


def _collect_warnings(cfg, dim_tables, extras, stage_warnings):
    warnings = list(stage_warnings)
    thresholds = cfg.warning_thresholds
    replicated_by_ds = {}
    for (ds, _), ex in extras.items():
        if "replicated_rows" in ex:
            replicated_by_ds[ds] = max(
                replicated_by_ds.get(ds, 0), ex["replicated_rows"]
            )
    for ds, count in sorted(replicated_by_ds.items()):
        if count > thresholds["replicated_rows"]:
            warnings.append(
                WarningMessage(
                    "replicated_rows", "warn",
                    f"{ds}: {count} synthetic rows replicate real training rows "
                    f"(threshold {thresholds['replicated_rows']})",
                    metric="replicated_rows",
                    threshold=thresholds["replicated_rows"],
                )
            )
    for ds, dims in sorted(dim_tables.items()):
        for dim, key in (("privacy", "privacy_index"), ("fairness", "fairness_index")):
            if dim in dims and dims[dim]["mean"] < thresholds[key]:
                warnings.append(
                    WarningMessage(
                        key, "warn",
                        f"{ds}: {dim} index {dims[dim]['mean']:.3f} below "
                        f"threshold {thresholds[key]}",
                        metric=key,
                        threshold=thresholds[key],
                    )
                )
    return warnings


def run_audit(cfg, raw_config=None, synthetic_datasets=None, real=None):
    """Execute the full audit pipeline and assemble the report.

    `synthetic_datasets` may pass in-memory datasets as {id: TabularDataset},
    bypassing CSV loading (used by the collapse harness and tests).
    """
    stage = "load"
    try:
        schema = DatasetSchema.from_file(cfg.schema_path) if real is None else real.schema
        if real is None:
            real = load_csv(cfg.real_csv, schema)
        if synthetic_datasets is None:
            synthetic_datasets = {
                s["id"]: load_csv(
                    s["csv"], schema, Origin.synthetic(s["id"])
                )
                for s in cfg.synthetic
            }
        if not synthetic_datasets:
            raise DataError("no synthetic datasets to audit")

        stage = "split"
        folds = split_folds(real, cfg.ratios, cfg.num_folds, cfg.base_seed)

        stage = "metrics"
        contexts = [FoldContext.build(real, fold, cfg) for fold in folds]
        jobs = [
            (ctx, ds_id, synth)
            for ctx in contexts
            for ds_id, synth in sorted(synthetic_datasets.items())
        ]
        workers = int(os.environ.get("TRUST_AUDIT_THREADS", cfg.workers))
        results = {}
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(compute_metric_records, ctx, synth, ds_id, cfg):
                    (ds_id, ctx.fold_id)
                    for ctx, ds_id, synth in jobs
                }
                for fut, key in futures.items():
                    results[key] = fut.result()
        else:
            for ctx, ds_id, synth in jobs:
                results[(ds_id, ctx.fold_id)] = compute_metric_records(
                    ctx, synth, ds_id, cfg
                )

        records, extras, stage_warnings = [], {}, []
        for key in sorted(results):
            recs, ex, warns = results[key]
            records += recs
            extras[key] = ex
            stage_warnings += warns

        stage = "aggregate"
        rankings, dim_tables = aggregate_records(
            records, cfg.profiles, cfg.alpha, cfg.dimensions
        )

        stage = "report"
        warnings = _collect_warnings(cfg, dim_tables, extras, stage_warnings)
        quantizer_warnings = sorted(
            {w for ctx in contexts for w in ctx.quantizer.warnings_}
        )
        for text in quantizer_warnings:
            warnings.append(WarningMessage("constant_column", "info", text))
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        now = (
            datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc)
            if epoch
            else datetime.datetime.now(datetime.timezone.utc)
        )
        metadata = {
            "tool_version": __version__,
            "config_digest": _config_digest(raw_config or {}),
            "generated_at": now.isoformat(),
            "seeds": {"base_seed": cfg.base_seed, "rff_seed": cfg.rff_seed},
            "alpha": cfg.alpha,
            "real_data": {
                "rows": real.n_rows,
                "columns": len(real.schema.columns),
                "dropped_rows": real.dropped_rows,
                "target": real.schema.target,
                "protected": real.schema.protected,
            },
            "synthetic_datasets": sorted(synthetic_datasets),
            "decisions": {
                "raw_space_distance": "hamming over quantized tokens",
                "validation_index_combiner": "weighted geometric mean",
                "positive_class": "lexicographically larger target category",
                "dp_laplace_scale": "2*T/(epsilon*|V_L|), as published",
            },
            "warning_thresholds": cfg.warning_thresholds,
        }
        return AuditReport(
            metadata=metadata,
            profiles=cfg.profiles,
            rankings=rankings,
            dimension_tables=dim_tables,
            records=records,
            extras=extras,
            warnings=warnings,
        )
    except AuditError:
        raise
    except Exception as exc:
        raise AuditError(stage, exc) from exc


def render_json(report):
    return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"


_MEDALS = {1: "\U0001f947", 2: "\U0001f948", 3: "\U0001f949"}


def render_markdown(report):
    lines = ["# Synthetic Data Audit Report", ""]
    lines += ["## Metadata", ""]
    for key in sorted(report.metadata):
        if key == "decisions":
            continue
        lines.append(f"- **{key}**: {json.dumps(report.metadata[key], sort_keys=True, default=str)}")
    lines.append("")

    lines += ["## Profiles", "", "| profile | raw weights | normalized |", "| --- | --- | --- |"]
    for p in report.profiles:
        raw = p.raw if p.raw else p.weights
        raw_txt = "(" + ",".join(f"{v:g}" for v in raw) + f")/{sum(raw):g}"
        norm_txt = ", ".join(f"{w:.3f}" for w in p.weights)
        lines.append(f"| {p.name} | {raw_txt} | {norm_txt} |")
    lines.append("")

    lines += ["## Ranked Lists", ""]
    for name in report.rankings:
        lines.append(f"### Profile {name}")
        lines.append("")
        lines.append("| rank | model | tau (delta) | R^alpha |")
        lines.append("| --- | --- | --- | --- |")
        for entry in report.rankings[name]:
            medal = _MEDALS.get(entry["rank"], "")
            rank_txt = f"{medal} {entry['rank']}".strip()
            lines.append(
                f"| {rank_txt} | {entry['model_id']} | {entry['display']} | "
                f"{entry['score']:.4f} |"
            )
        lines.append("")

    lines += ["## Dimension Index Tables", ""]
    dims = [d for d in DIMENSIONS]
    lines.append("| model | " + " | ".join(dims) + " |")
    lines.append("| --- |" + " --- |" * len(dims))
    for ds in sorted(report.dimension_tables):
        row = [report.dimension_tables[ds].get(d, {}).get("display", "-") for d in dims]
        lines.append(f"| {ds} | " + " | ".join(row) + " |")
    lines.append("")

    lines += ["## Metric Breakdown", ""]
    lines.append("| metric | dimension | polarity | model | fold | value |")
    lines.append("| --- | --- | --- | --- | --- | --- |")
    for rec in report.records:
        value = "missing" if rec.value is None else f"{rec.value:.6g}"
        lines.append(
            f"| {rec.metric} | {rec.dimension} | {rec.polarity:+d} | "
            f"{rec.dataset_id} | {rec.fold_id} | {value} |"
        )
    lines.append("")

    lines += ["## Warnings", ""]
    if report.warnings:
        for w in report.warnings:
            lines.append(f"- **{w.severity}** [{w.code}] {w.text}")
    else:
        lines.append("None.")
    lines.append("")

    lines += ["## Design-Decision Disclosure", ""]
    for key, value in sorted(report.metadata.get("decisions", {}).items()):
        lines.append(f"- {key}: {value}")
    lines.append("")
    return "\n".join(lines)


def run_collapse(real, generations, rows_per_gen, seed=0, cfg=None):
    """Iterative-retraining harness: audit each generation's fidelity/privacy.

    Returns generation datasets plus per-generation fidelity and privacy
    indices pooled across generations.
    """
    datasets = iterative_retrain(real, generations, rows_per_gen, seed=seed)
    if cfg is None:
        cfg = AuditConfig(
            real_csv="", schema_path="", synthetic=[],
            num_folds=1, dimensions=("fidelity", "privacy"),
            permutations=50, rff_features=128, max_metric_rows=500,
            profiles=[TrustProfile.from_raw("FP", (100, 100, 0, 0, 0))],
        )
    synth = {f"gen{g + 1:02d}": ds for g, ds in enumerate(datasets)}
    report = run_audit(cfg, synthetic_datasets=synth, real=real)
    fidelity = [
        report.dimension_tables[ds]["fidelity"]["mean"] for ds in sorted(synth)
    ]
    privacy = [
        report.dimension_tables[ds]["privacy"]["mean"] for ds in sorted(synth)
    ]
    return {
        "datasets": datasets,
        "fidelity_indices": fidelity,
        "privacy_indices": privacy,
        "report": report,
    }
