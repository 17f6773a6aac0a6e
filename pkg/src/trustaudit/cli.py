"""Command-line interface: audit, rank, select, generate, collapse."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from scipy.stats import spearmanr

from .aggregation import (
    geo_mean_deviation,
    load_profiles,
    MetricPool,
    preset_profiles,
    rank_with_uncertainty,
    read_records_jsonl,
    select_checkpoint,
    trustworthiness_index,
)
from .data import DataError, DatasetSchema, load_csv
from .report import AuditConfig, AuditError, render_json, render_markdown, run_audit, run_collapse
from .synthgen import (
    GaussianCopulaGenerator,
    IndependentCategoricalSampler,
    PrivateSamplerConfig,
)
from .data import Quantizer


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="trustaudit",
        description="Audit synthetic tabular datasets against real data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_audit = sub.add_parser("audit", help="run a full audit from a config file")
    p_audit.add_argument("--config", required=True)
    p_audit.add_argument("--out", required=True)

    p_rank = sub.add_parser("rank", help="rank models from a metric-record file")
    p_rank.add_argument("--records", required=True)
    p_rank.add_argument("--profiles", default=None)
    p_rank.add_argument("--alpha", type=float, default=0.0)

    p_select = sub.add_parser("select", help="select the best checkpoint")
    p_select.add_argument("--records", required=True)
    p_select.add_argument("--profile", required=True)
    p_select.add_argument("--profiles", default=None)

    p_gen = sub.add_parser("generate", help="sample from a Gaussian-copula fit")
    p_gen.add_argument("--real", required=True)
    p_gen.add_argument("--schema", required=True)
    p_gen.add_argument("--rows", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--dp-epsilon", type=float, default=None)
    p_gen.add_argument("--out", default=None)

    p_col = sub.add_parser("collapse", help="iterative retraining experiment")
    p_col.add_argument("--real", required=True)
    p_col.add_argument("--schema", required=True)
    p_col.add_argument("--generations", type=int, required=True)
    p_col.add_argument("--rows", type=int, default=2000)
    p_col.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_audit(args):
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = AuditConfig.from_json(raw, base_dir=os.path.dirname(os.path.abspath(args.config)))
    report = run_audit(cfg, raw_config=raw)
    os.makedirs(args.out, exist_ok=True)
    json_path = os.path.join(args.out, "audit_report.json")
    md_path = os.path.join(args.out, "audit_report.md")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(render_json(report))
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(render_markdown(report))
    print(f"report written to {json_path} and {md_path}")
    for warning in report.warnings:
        print(f"[{warning.severity}] {warning.text}")
    return 0


def _profiles_from(path):
    return load_profiles(path) if path else preset_profiles()


def _cmd_rank(args):
    records = read_records_jsonl(args.records)
    profiles = _profiles_from(args.profiles)
    pool = MetricPool()
    for rec in records:
        pool.add(rec)
    pool.freeze()
    by_item = {}
    for rec in records:
        by_item.setdefault((rec.model_id, rec.fold_id), []).append(rec)
    from .aggregation import indices_from_records

    for profile in profiles:
        taus = {}
        for (model_id, _), recs in sorted(by_item.items()):
            indices = indices_from_records(recs, pool)
            taus.setdefault(model_id, []).append(
                trustworthiness_index(indices, profile)
            )
        per_model = {m: geo_mean_deviation(v) for m, v in taus.items()}
        entries = rank_with_uncertainty(per_model, args.alpha)
        print(f"profile {profile.name}:")
        for i, e in enumerate(entries, 1):
            print(
                f"  {i}. {e.model_id}  tau={e.tau_mean:.4f} "
                f"delta={e.tau_delta:.4g} R^alpha={e.score:.4f}"
            )
    return 0


def _cmd_select(args):
    records = read_records_jsonl(args.records)
    profiles = {p.name: p for p in _profiles_from(args.profiles)}
    if args.profile not in profiles:
        raise DataError(f"unknown profile {args.profile!r}")
    best, scores = select_checkpoint(records, profiles[args.profile])
    print(f"selected checkpoint: {best}")
    for ckp in sorted(scores):
        print(f"  {ckp}: validation tau = {scores[ckp]:.4f}")
    return 0


def _cmd_generate(args):
    schema = DatasetSchema.from_file(args.schema)
    real = load_csv(args.real, schema)
    if args.dp_epsilon is None:
        model = GaussianCopulaGenerator(seed=args.seed).fit(real)
        synth = model.sample(args.rows, seed=args.seed)
    else:
        quantizer = Quantizer().fit(real)
        tokens = quantizer.transform(real)
        sampler = IndependentCategoricalSampler(quantizer, tokens)
        cfg = PrivateSamplerConfig(
            epsilon=args.dp_epsilon,
            seq_length=len(quantizer.columns_),
            vocab_sizes=[quantizer.vocab_size(c) for c in quantizer.columns_],
        )
        synth_tokens = sampler.sample_tokens(args.rows, seed=args.seed, private_cfg=cfg)
        synth = quantizer.decode(synth_tokens, schema, real)
    out = args.out or "synthetic.csv"
    synth.to_csv(out)
    mode = "non-private" if args.dp_epsilon is None else f"dp epsilon={args.dp_epsilon}"
    print(f"wrote {synth.n_rows} rows to {out} ({mode})")
    return 0


def _cmd_collapse(args):
    schema = DatasetSchema.from_file(args.schema)
    real = load_csv(args.real, schema)
    result = run_collapse(real, args.generations, args.rows, seed=args.seed)
    fidelity = result["fidelity_indices"]
    privacy = result["privacy_indices"]
    gens = list(range(1, len(fidelity) + 1))
    for g, f, p in zip(gens, fidelity, privacy):
        print(f"generation {g}: fidelity index {f:.4f}, privacy index {p:.4f}")
    if len(gens) > 2:
        rho_f = spearmanr(gens, fidelity).statistic
        rho_p = spearmanr(gens, privacy).statistic
        print(f"spearman(generation, fidelity) = {rho_f:.3f}")
        print(f"spearman(generation, privacy) = {rho_p:.3f}")
    return 0


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    handlers = {
        "audit": _cmd_audit,
        "rank": _cmd_rank,
        "select": _cmd_select,
        "generate": _cmd_generate,
        "collapse": _cmd_collapse,
    }
    try:
        return handlers[args.command](args)
    except (DataError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except AuditError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
