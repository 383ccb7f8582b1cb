"""Command-line entrypoint orchestrating the full pipeline.

Subcommands: synth-data, ssl-finetune (alias: pretrain), train-head,
train-fusion, evaluate, report. Stage outputs land under
``<out>/<stage>/<seed>/`` and every command is idempotent for fixed inputs
and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import reports
from .checkpoint import load_module_state, save_module
from .config import apply_config_file, parse_synthetic_spec
from .corpus import SyntheticSpec, load_corpus, save_corpus, synth_generate
from .pipeline import (
    MODALITIES,
    PROFILES,
    RunProfile,
    evaluate_modality,
    run_experiment,
    ssl_finetune,
)
from .video_encoder import VideoAutoencoder


def _profile(args) -> RunProfile:
    profile = PROFILES[args.profile]()
    if getattr(args, "config", None):
        profile = apply_config_file(profile, args.config)
    if getattr(args, "group_split", False):
        profile.group_split = True
    return profile


def _stage_dir(out: str, stage: str, seed: int) -> Path:
    path = Path(out) / stage / str(seed)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth_data(args) -> int:
    spec = parse_synthetic_spec(args.spec) if args.spec else SyntheticSpec()
    corpus = synth_generate(spec, seed=args.seed)
    manifest = save_corpus(corpus, args.out)
    n_pos = sum(r.label for r in corpus.records)
    summary = {
        "manifest": str(manifest),
        "n_instances": len(corpus.records),
        "n_positive": n_pos,
        "positive_rate": round(n_pos / len(corpus.records), 6),
        "n_unlabeled": len(corpus.unlabeled_clips),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_ssl_finetune(args) -> int:
    profile = _profile(args)
    corpus = load_corpus(args.manifest)
    encoder, curve, counts = ssl_finetune(corpus, profile, args.strategy, args.seed)
    out = _stage_dir(args.out, f"ssl-{args.strategy}", args.seed)
    save_module(
        out / "encoder.ckpt", encoder,
        config=vars(profile.encoder), extra={"stage": f"ssl-{args.strategy}", "seed": args.seed},
    )
    reports.write_curve(curve, "reconstruction_loss", out / "loss_curve.jsonl")
    print(json.dumps({**counts, "final_loss": round(curve[-1], 6)}, sort_keys=True))
    return 0


def _load_encoder(profile: RunProfile, path: str) -> VideoAutoencoder:
    encoder = VideoAutoencoder(profile.encoder)
    load_module_state(path, encoder)
    return encoder


def _run_single(args, modality: str) -> int:
    profile = _profile(args)
    corpus = load_corpus(args.manifest)
    pretrained = None
    if getattr(args, "encoder_ckpt", None):
        ckpt = Path(args.encoder_ckpt)
        if not ckpt.exists():
            raise FileNotFoundError(
                f"encoder checkpoint {ckpt} not found; run ssl-finetune (or train-head) first"
            )
        pretrained = _load_encoder(profile, ckpt)
    result = run_experiment(
        corpus, profile, modality, seed=args.seed,
        ssl_strategy=getattr(args, "strategy", None),
        pretrained_encoder=pretrained,
    )
    stage = "head" if modality == "video" else modality
    out = _stage_dir(args.out, stage, args.seed)
    if result.encoder is not None:
        save_module(
            out / "encoder.ckpt", result.encoder,
            config=vars(profile.encoder), extra={"stage": stage, "seed": args.seed},
        )
    reports.write_summary(result.report_raw, out / "metrics_test_raw.json")
    reports.write_summary(result.report_upsampled, out / "metrics_test_upsampled.json")
    reports.write_curve(result.val_accuracy_curve, "val_accuracy", out / "val_curve.jsonl")
    print(json.dumps({"auroc_raw": round(result.report_raw.auroc, 6)}, sort_keys=True))
    return 0


def cmd_train_head(args) -> int:
    return _run_single(args, "video")


def cmd_train_fusion(args) -> int:
    return _run_single(args, "fusion")


def cmd_evaluate(args) -> int:
    profile = _profile(args)
    corpus = load_corpus(args.manifest)
    summary = evaluate_modality(
        corpus, profile, args.modality, root_seed=args.seed,
        n_seeds=args.seeds, ssl_strategy=args.strategy,
    )
    out = _stage_dir(args.out, f"evaluate-{args.modality}", args.seed)
    for res in summary.per_seed:
        seed_dir = out / f"split-{res.seed}"
        reports.write_summary(res.report_raw, seed_dir / "metrics_test_raw.json")
        reports.write_summary(res.report_upsampled, seed_dir / "metrics_test_upsampled.json")
        if res.instances_raw:
            reports.write_roc_points(res.instances_raw, seed_dir / "roc_points.csv")
    reports.write_summary(summary.aggregate_raw, out / "aggregate_test_raw.json")
    reports.write_summary(summary.aggregate_upsampled, out / "aggregate_test_upsampled.json")
    print(
        json.dumps(
            {
                "modality": args.modality,
                "auroc_mean": round(summary.aggregate_raw.auroc, 6),
                "auroc_std": round(summary.aggregate_raw.std["auroc"], 6),
            },
            sort_keys=True,
        )
    )
    return 0


def _mean_confidence_rows(per_seed: list[dict]) -> list[tuple[float, float, float | None]]:
    """Average per-seed confidence tables row-wise; accuracy averages over the
    seeds where it is defined and stays None if it never is."""
    tables = [obj["confidence"] for obj in per_seed if "confidence" in obj]
    if not tables:
        return []
    rows = []
    for i, (threshold, _, _) in enumerate(tables[0]):
        pcts = [t[i][1] for t in tables]
        accs = [t[i][2] for t in tables if t[i][2] is not None]
        rows.append(
            (threshold, sum(pcts) / len(pcts), sum(accs) / len(accs) if accs else None)
        )
    return rows


def _mean_group_rows(per_seed: list[dict], key: str) -> list[tuple[str, int, float]]:
    """Merge per-seed group tables: counts summed, F1 averaged per group."""
    merged: dict[str, list] = {}
    for obj in per_seed:
        for name, count, f1 in obj.get(key, []):
            merged.setdefault(name, [0, []])
            merged[name][0] += count
            merged[name][1].append(f1)
    return [(name, total, sum(f1s) / len(f1s)) for name, (total, f1s) in sorted(merged.items())]


def cmd_report(args) -> int:
    """Render method, per-group, and confidence tables from evaluate outputs."""
    from .evaluation import MetricsReport

    out = Path(args.out)
    method_rows = []
    report_dir = _stage_dir(args.out, "report", args.seed)
    for modality in MODALITIES:
        eval_dir = out / f"evaluate-{modality}" / str(args.seed)
        agg = eval_dir / "aggregate_test_raw.json"
        if not agg.exists():
            continue
        obj = json.loads(agg.read_text())
        method_rows.append(
            (
                modality,
                MetricsReport(
                    auroc=obj["metrics"]["auroc"],
                    precision=obj["metrics"]["precision"],
                    recall=obj["metrics"]["recall"],
                    f1=obj["metrics"]["f1"],
                    std=obj["std"],
                    seeds=obj["seeds"],
                ),
            )
        )
        per_seed = [
            json.loads(p.read_text())
            for p in sorted(eval_dir.glob("split-*/metrics_test_raw.json"))
        ]
        confidence = _mean_confidence_rows(per_seed)
        if confidence:
            reports.write_confidence_table(
                confidence, report_dir / f"confidence_{modality}.csv"
            )
        for key, group_key in (("per_surgery", "surgery_type"), ("per_trainer", "trainer_id")):
            rows = _mean_group_rows(per_seed, key)
            if rows:
                reports.write_group_table(
                    rows, group_key, report_dir / f"{key}_{modality}.csv"
                )
    if not method_rows:
        raise FileNotFoundError(
            f"no evaluate outputs under {out}; run the evaluate command first"
        )
    reports.write_method_table(method_rows, report_dir / "method_table.csv")
    print(json.dumps({"methods": [name for name, _ in method_rows]}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surgfb")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--config", help="INI config file overlaying the profile")
        p.add_argument("--group-split", action="store_true")
        if manifest:
            p.add_argument("--manifest", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--spec", help="INI file with a [synthetic] section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    for name in ("ssl-finetune", "pretrain"):
        p = sub.add_parser(name, help="self-supervised fine-tuning of the video encoder")
        common(p)
        p.add_argument("--strategy", choices=("task", "domain"), default="task")
        p.set_defaults(func=cmd_ssl_finetune)

    p = sub.add_parser("train-head", help="supervised video funnel-head training")
    common(p)
    p.add_argument("--strategy", choices=("task", "domain"))
    p.add_argument("--encoder-ckpt", help="start from an SSL encoder checkpoint")
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("train-fusion", help="frozen-encoder multi-modal fusion training")
    common(p)
    p.add_argument("--strategy", choices=("task", "domain"))
    p.add_argument("--encoder-ckpt")
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("evaluate", help="multi-seed evaluation protocol")
    common(p)
    p.add_argument("--modality", choices=MODALITIES, required=True)
    p.add_argument("--strategy", choices=("task", "domain"))
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render tables from evaluate outputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # contract errors exit nonzero with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
