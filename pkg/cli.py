#!/usr/bin/env python3
"""
GAMED detector - command-line tool

Sub-commands:
1. gen-data   - generate the synthetic train/val/test splits and a manifest
2. train      - train a model, write metrics.csv, model.bin and run.json
3. eval       - score a saved model on a JSONL split, write eval.json
4. explain    - write the veto decision trace of one record
5. ablate     - train and score a grid of ablation variants, write ablation.csv
6. similarity - cosine similarity of the 64-dim head reductions, write similarity.csv

Exit codes: 0 ok, 1 unexpected, 2 config, 3 data, 4 numeric divergence,
5 model format, 6 unknown record.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from config.run_config import config_hash, load_env, load_gen_spec, load_run_config
from data.jsonl_store import file_sha256, read_jsonl, write_jsonl
from data.synthdata import SPLITS, generate, split_summary
from models.config_schemas import MODULE_IDS
from models.data_schemas import DataManifest, NewsRecord, SplitInfo
from models.report_schemas import EvalReport, ExplainReport, RunSummary, TraceStep
from pipeline.ablation import ablation_frame, parse_grid, run_ablation
from pipeline.metrics import compute_metrics, cosine_similarity_matrix, predict, reduced_representations
from pipeline.model import GamedModel, forward
from pipeline.serialization import load_model, save_model
from pipeline.trainer import Trainer
from utils.errors import ConfigError, DataError, GamedError, RecordNotFoundError
from utils.logger import setup_logger
from voting.veto import confidence

logger = logging.getLogger("cli")


def _write_json(path: Path, payload: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(payload + "\n", encoding="utf-8")
    logger.info(f"wrote {path}")


def _split_path(data_dir: Path, split: str) -> Path:
    for suffix in (".jsonl", ".jsonl.gz"):
        candidate = data_dir / f"{split}{suffix}"
        if candidate.is_file():
            return candidate
    raise DataError(f"{data_dir}: missing {split}.jsonl")


def load_splits(data_dir) -> Tuple[List[NewsRecord], List[NewsRecord], List[NewsRecord]]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    train, val, test = (read_jsonl(_split_path(data_dir, split)) for split in SPLITS)
    if not train:
        raise DataError(f"{data_dir}: training split is empty")
    return train, val, test


def _require_out(out: Optional[str]) -> Path:
    if not out:
        raise ConfigError("out: an output directory is required")
    return Path(out)


def _print_metrics(title: str, metrics) -> None:
    print(f"{title}: Acc {metrics.accuracy:.4f}  P {metrics.precision:.4f}  "
          f"R {metrics.recall:.4f}  F1 {metrics.f1:.4f}")


def cmd_gen_data(args) -> int:
    """Generate the three splits and ``manifest.json``."""
    out = _require_out(args.out)
    spec = load_gen_spec(args.spec, seed=args.seed, overrides=args.set)
    suffix = ".jsonl.gz" if args.gzip else ".jsonl"

    splits = {}
    for split, records in zip(SPLITS, generate(spec)):
        path = out / f"{split}{suffix}"
        write_jsonl(records, path)
        splits[split] = SplitInfo(file=path.name, sha256=file_sha256(path), **split_summary(records))
        logger.info(f"wrote {path} ({len(records)} records)")

    manifest = DataManifest(spec=spec, seed=spec.seed, splits=splits)
    _write_json(out / "manifest.json", manifest.model_dump_json(indent=2))
    print(f"Generated {', '.join(f'{s}={splits[s].records}' for s in SPLITS)} in {out}")
    return 0


def cmd_train(args) -> int:
    """Train, then write metrics.csv, model.bin and run.json."""
    cfg = load_run_config(args.config, args.set, seed=args.seed, out=args.out)
    out = _require_out(cfg.out)
    train, val, test = load_splits(args.data)

    model = GamedModel(cfg)
    log = Trainer(model).fit(train, val)
    out.mkdir(parents=True, exist_ok=True)
    log.write_csv(out / "metrics.csv")
    save_model(model, out / "model.bin")

    use_veto = not cfg.ablation.disable_veto
    val_pred, test_pred = predict(model, val), predict(model, test)
    summary = RunSummary(
        config_hash=config_hash(cfg),
        variant=cfg.ablation.variant_name(),
        epochs=cfg.train.epochs,
        parameters=model.parameter_count(),
        final_train_loss=log.loss(cfg.train.epochs),
        val=compute_metrics(val_pred.final_labels(use_veto), val_pred.labels),
        test=compute_metrics(test_pred.final_labels(use_veto), test_pred.labels),
        test_without_veto=compute_metrics(test_pred.final_labels(False), test_pred.labels),
        files=["metrics.csv", "model.bin", "run.json"],
    )
    _write_json(out / "run.json", summary.model_dump_json(indent=2))
    _print_metrics("test", summary.test)
    return 0


def cmd_eval(args) -> int:
    """Score a saved model and write eval.json."""
    model = load_model(args.model)
    records = read_jsonl(args.data)
    if not records:
        raise DataError(f"{args.data}: no records to evaluate")
    use_veto = not args.no_veto
    predictions = predict(model, records)
    report = EvalReport(
        model=str(args.model),
        data=str(args.data),
        use_veto=use_veto,
        records=len(records),
        metrics=compute_metrics(predictions.final_labels(use_veto), predictions.labels),
        modules={m: compute_metrics(predictions.head_labels[m], predictions.labels) for m in MODULE_IDS},
        mix=compute_metrics(predictions.head_labels["mix"], predictions.labels),
        veto_overrides=predictions.veto_overrides,
    )
    out = Path(args.out) if args.out else Path(args.model).parent
    _write_json(out / "eval.json", report.model_dump_json(indent=2))
    _print_metrics("veto" if use_veto else "concatenated", report.metrics)
    return 0


def explain_record(model: GamedModel, record: NewsRecord) -> ExplainReport:
    """Run one record and turn its vote into an explain report."""
    outputs = forward(record, model)
    result = outputs.votes[0]
    trace = result.trace
    return ExplainReport(
        record_id=record.id,
        label=record.label,
        predicted_label=result.label,
        theta_high=trace.theta_high,
        theta_low=trace.theta_low,
        rule3_reading=model.cfg.veto.rule3_reading,
        initial_p_mix=trace.initial_p_mix,
        final_p_mix=trace.final_p_mix,
        majority_class=trace.majority_class,
        tie=trace.tie,
        module_confidences={step.module: step.confidence for step in trace.steps},
        consistency_confidence=confidence(float(outputs.logit_array("cons")[0])),
        steps=[TraceStep(module=s.module, confidence=s.confidence, rule=s.rule, p_mix_after=s.p_mix_after)
               for s in trace.steps],
        summary=trace.narrative(),
    )


def cmd_explain(args) -> int:
    """Write trace-<id>.json and print one line per rule firing."""
    model = load_model(args.model)
    records = {record.id: record for record in read_jsonl(args.data)}
    if args.id not in records:
        raise RecordNotFoundError(f"record '{args.id}' not found in {args.data}")
    report = explain_record(model, records[args.id])
    out = Path(args.out) if args.out else Path(args.model).parent
    _write_json(out / f"trace-{args.id}.json", report.model_dump_json(indent=2))
    for line in report.summary:
        print(line)
    return 0


def cmd_ablate(args) -> int:
    """Run each grid variant and write ablation.csv sorted by accuracy."""
    cfg = load_run_config(args.config, args.set, seed=args.seed, out=args.out)
    out = _require_out(cfg.out)
    variants = parse_grid(args.grid)
    train, val, test = load_splits(args.data)
    rows = run_ablation(cfg, variants, train, val, test)
    out.mkdir(parents=True, exist_ok=True)
    ablation_frame(rows).to_csv(out / "ablation.csv", index=False, float_format="%.6f")
    logger.info(f"wrote {out / 'ablation.csv'}")
    for row in rows:
        print(f"{row.variant:<40} acc {row.acc:.4f}  f1 {row.f1:.4f}")
    return 0


def select_per_class(records: Sequence[NewsRecord], per_class: int) -> List[NewsRecord]:
    """First ``per_class`` real records followed by the first ``per_class`` fake ones."""
    if per_class < 1:
        raise ConfigError("per_class: must be at least 1")
    chosen = []
    for label in (0, 1):
        chosen.extend([r for r in records if r.label == label][:per_class])
    return chosen


def cmd_similarity(args) -> int:
    """Cosine similarity of reduced representations for selected records."""
    model = load_model(args.model)
    selected = select_per_class(read_jsonl(args.data), args.per_class)
    reduced = reduced_representations(model, selected)
    rows = []
    for module, vectors in reduced.items():
        matrix = cosine_similarity_matrix(vectors)
        same = np.equal.outer([r.label for r in selected], [r.label for r in selected])
        off_diagonal = ~np.eye(len(selected), dtype=bool)
        within = matrix[same & off_diagonal].mean() if (same & off_diagonal).any() else float("nan")
        across = matrix[~same].mean() if (~same).any() else float("nan")
        print(f"{module:<4} within-class {within:.4f}  across-class {across:.4f}")
        for i, a in enumerate(selected):
            for j, b in enumerate(selected):
                rows.append({"module": module, "id_a": a.id, "id_b": b.id, "label_a": a.label,
                             "label_b": b.label, "cosine": float(matrix[i, j])})
    out = Path(args.out) if args.out else Path(args.model).parent
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out / "similarity.csv", index=False, float_format="%.6f")
    logger.info(f"wrote {out / 'similarity.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamed", description="Toy multimodal fake-news detector")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_overrides(p: argparse.ArgumentParser) -> None:
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="Override one config value (repeatable)")

    p = sub.add_parser("gen-data", help="Generate synthetic splits")
    p.add_argument("--spec", help="TOML file with a [data] table or GenSpec keys")
    p.add_argument("--out", help="Output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--gzip", action="store_true", help="Write .jsonl.gz files")
    with_overrides(p)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("--config", help="Run-configuration TOML file")
    p.add_argument("--data", required=True, help="Directory with train/val/test splits")
    p.add_argument("--out", help="Output directory (or 'out' in the config)")
    p.add_argument("--seed", type=int)
    with_overrides(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="JSONL split")
    p.add_argument("--no-veto", action="store_true", help="Use sigmoid(O_mix) > 0.5 instead of the veto")
    p.add_argument("--out", help="Output directory (defaults to the model's directory)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("explain", help="Explain the decision on one record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", help="Output directory (defaults to the model's directory)")
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("ablate", help="Run an ablation grid")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="Comma list: none, disable_adain, ..., module_subset=t+mm")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    with_overrides(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("similarity", help="Cosine similarity of reduced representations")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-class", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_similarity)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and run one command.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    level, log_file = load_env()
    setup_logger(level=level, log_file=log_file)
    try:
        return args.handler(args)
    except GamedError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nProcess interrupted by user.")
        sys.exit(130)
