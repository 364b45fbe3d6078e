"""Batch CLI for the full lifecycle:

    label -> dataset.jsonl -> train -> model.json -> calibrate -> policy.json
          -> evaluate -> report.csv (+ figures)      simulate / stats / serve

Subcommands compose through files; every report path writes matplotlib
figures next to its delimited output. Failures print a machine-readable
error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import figures
from .core import CostModel, ExactMatchJudge, Query, ShepherdError, TaskKind, money_str
from .features import Mode
from .gateway import Gateway, GatewayConfig, GatewayServer, backend_from_config, cost_model_from_config
from .labeling import (
    dataset_stats,
    filter_dataset,
    label_dataset,
    read_labeled_dataset,
    stats_to_profile,
    write_labeled_dataset,
)
from .metrics import CalibrationPoint, calibrate
from .predictor import PredictorConfig, TrainedModel
from .published import TABLES
from .reporting import (
    evaluate_strategies,
    format_report_table,
    read_outcomes,
    report_rows_from_pairs,
    report_rows_from_published,
    save_report_figures,
    write_outcomes,
    write_report_csv,
)
from .simulator import ExperimentConfig, load_profile, run_experiment
from .training import feature_matrix, train


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": {"type": kind, "message": message}}), file=sys.stderr)
    return 1


def _read_queries(path: str) -> list[Query]:
    queries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            queries.append(
                Query.from_text(
                    id=str(rec["id"]),
                    text=rec.get("text") or rec["prompt"],
                    task_kind=TaskKind(rec.get("task_kind", "math_numeric")),
                    ground_truth=rec.get("ground_truth"),
                )
            )
    return queries


def _cost_model(args) -> CostModel:
    return CostModel.from_per_million(args.cost_llm_in, args.cost_llm_out, args.cost_slm_in, args.cost_slm_out)


def _add_cost_flags(parser):
    parser.add_argument("--cost-llm-in", default="0.59", help="LLM $ per 1M input tokens")
    parser.add_argument("--cost-llm-out", default="0.79", help="LLM $ per 1M output tokens")
    parser.add_argument("--cost-slm-in", default="0", help="SLM $ per 1M input tokens")
    parser.add_argument("--cost-slm-out", default="0", help="SLM $ per 1M output tokens")


def cmd_label(args) -> int:
    from .core import Role

    with open(args.backends, "r", encoding="utf-8") as fh:
        backends_cfg = json.load(fh)
    cm = cost_model_from_config(backends_cfg.get("cost_model"))
    base_dir = Path(args.backends).parent
    slm = backend_from_config(backends_cfg["slm"], Role.SLM, cm, base_dir)
    llm = backend_from_config(backends_cfg["llm"], Role.LLM, cm, base_dir)

    queries = _read_queries(args.queries)
    examples, skipped = label_dataset(
        queries,
        slm,
        llm,
        ExactMatchJudge(),
        step_pct=args.step,
        reactive_samples=args.reactive_samples,
        workers=args.workers,
    )
    for qid, reason in skipped:
        print(f"[label] skipped {qid}: {reason}", file=sys.stderr)
    if args.keep_all:
        kept, dropped = examples, []
    else:
        kept, dropped = filter_dataset(examples, args.outlier_threshold)
    for ex, reason in dropped:
        print(f"[label] dropped {ex.query.id}: {reason}", file=sys.stderr)
    write_labeled_dataset(args.out, kept)
    print(f"[label] wrote {len(kept)} examples to {args.out} ({len(dropped)} dropped, {len(skipped)} skipped)")
    return 0


def _split(examples, val_fraction: float, seed: int):
    idx = list(range(len(examples)))
    np.random.default_rng(seed).shuffle(idx)
    n_val = max(1, int(len(examples) * val_fraction))
    val = [examples[i] for i in idx[:n_val]]
    tr = [examples[i] for i in idx[n_val:]]
    return tr, val


def cmd_train(args) -> int:
    examples = read_labeled_dataset(args.dataset)
    if len(examples) < 4:
        return _fail("insufficient_data", f"need at least 4 labeled examples, found {len(examples)}")
    train_split, val_split = _split(examples, args.val_fraction, args.seed)
    cfg = PredictorConfig(
        mode=Mode(args.mode),
        embedding_dim=args.embedding_dim,
        fusion_dim=args.fusion_dim,
        head_hidden=args.head_hidden,
        dropout_rate=args.dropout,
        lambda_weight=args.lambda_weight,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        ema_decay=args.ema_decay,
        seed=args.seed,
    )
    model = train(train_split, val_split, cfg, verbose=not args.quiet)
    model.save(args.out)
    last = model.history[-1] if model.history else {}
    print(
        f"[train] saved {args.out} (mode={args.mode}, best_val_loss={model.val_loss:.4f}, "
        f"val_hint_acc={last.get('val_hint_acc', float('nan')):.3f})"
    )
    return 0


def cmd_calibrate(args) -> int:
    model = TrainedModel.load(args.model)
    examples = read_labeled_dataset(args.dataset)
    xf_raw = feature_matrix(examples, model.mode)
    preds = model.predict_arrays(xf_raw, [e.query.text for e in examples])
    points = [CalibrationPoint.from_example(ex, p) for ex, p in zip(examples, preds)]
    cm = _cost_model(args)

    etas = None
    if args.eta_max:
        etas = list(range(10, args.eta_max + 1, args.eta_step))
    result = calibrate(points, mode=args.mode, target=args.target, cm=cm, etas=etas)

    out_dir = Path(args.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "frontier.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "eta_hint", "accuracy", "cost_usd"])
        for cell in result.frontier:
            writer.writerow([cell.alpha, cell.eta, f"{cell.accuracy:.4f}", money_str(cell.cost)])
    figures.save_frontier(result.frontier, out_dir / "frontier.png", chosen=result if result.feasible else None)

    if not result.feasible:
        return _fail(
            "infeasible_constraint",
            f"no (alpha, eta) meets {args.mode} target {args.target}; frontier written to {out_dir}",
        )
    policy = {
        "schema": "shepherd-policy/1",
        "alpha": result.alpha,
        "eta_hint": result.eta,
        "search_mode": args.mode,
        "target": args.target,
        "validation_accuracy": result.accuracy,
        "validation_cost_usd": money_str(result.cost),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(policy, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"[calibrate] alpha={result.alpha} eta_hint={result.eta} "
        f"val_accuracy={result.accuracy:.3f} val_cost=${money_str(result.cost)} -> {args.out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    sources = sum(1 for opt in (args.outcomes, args.reference, args.from_table) if opt)
    if sources != 1:
        return _fail("bad_arguments", "choose exactly one of --outcomes, --reference, --from-table")

    if args.reference:
        if args.reference not in TABLES:
            return _fail("unknown_reference", f"available: {sorted(TABLES)}")
        rows = report_rows_from_published(TABLES[args.reference])
    elif args.from_table:
        if args.llm_cost is None or args.llm_accuracy is None or args.slm_accuracy is None:
            return _fail("bad_arguments", "--from-table needs --llm-cost, --llm-accuracy, --slm-accuracy")
        with open(args.from_table, "r", encoding="utf-8") as fh:
            pairs = list(csv.DictReader(fh))
        rows = report_rows_from_pairs(
            pairs, Decimal(args.llm_cost), float(args.llm_accuracy), float(args.slm_accuracy)
        )
    else:
        outcomes = []
        for path in args.outcomes:
            outcomes.extend(read_outcomes(path))
        by_strategy: dict[str, list] = {}
        for o in outcomes:
            by_strategy.setdefault(o.strategy or "default", []).append(o)
        rows = evaluate_strategies(by_strategy)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / "report.csv", rows)
    table = format_report_table(rows)
    (out_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    save_report_figures(rows, out_dir)
    print(table)
    print(f"[evaluate] report written to {out_dir}")
    return 0


def cmd_simulate(args) -> int:
    profile = load_profile(args.profile)
    cm = _cost_model(args)
    config = ExperimentConfig(
        strategies=tuple(args.strategies.split(",")),
        trials=args.trials,
        epochs=args.epochs,
        reactive_samples=args.consensus_samples,
        consensus_quorum=args.consensus_quorum,
    )
    result = run_experiment(profile, args.n, args.seed, cm, config, verbose=not args.quiet)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_labeled_dataset(out_dir / "dataset.jsonl", result.examples)
    for name, model in result.models.items():
        model.save(out_dir / f"model_{name}.json")
    for name, outcomes in result.outcomes.items():
        write_outcomes(out_dir / f"outcomes_{name}.jsonl", outcomes)
    write_report_csv(out_dir / "report.csv", result.rows)
    table = format_report_table(result.rows)
    (out_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    save_report_figures(result.rows, out_dir)
    figures.save_hint_histogram(result.stats, out_dir / "hint_histogram.png")
    with open(out_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats_to_profile(result.stats, name=profile.name).to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(table)
    if result.dominance is not None:
        dom = result.dominance
        with open(out_dir / "dominance.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "checked": dom.checked,
                    "violations": list(dom.violations),
                    "total_route_usd": money_str(dom.total_route),
                    "total_shepherd_usd": money_str(dom.total_shep),
                    "savings_usd": money_str(dom.savings),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        status = "ok" if dom.holds else f"VIOLATED ({len(dom.violations)} queries)"
        print(f"[simulate] oracle dominance over {dom.checked} queries: {status}; savings ${money_str(dom.savings)}")
        if not dom.holds:
            return _fail("dominance_violation", f"queries: {dom.violations[:10]}")
    print(f"[simulate] artifacts written to {out_dir}")
    return 0


def cmd_stats(args) -> int:
    examples = read_labeled_dataset(args.dataset)
    stats = dataset_stats(examples, args.step)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = stats_to_profile(stats, name=args.profile_name)
    with open(out_dir / "profile.json", "w", encoding="utf-8") as fh:
        json.dump(profile.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    figures.save_hint_histogram(stats, out_dir / "hint_histogram.png")
    for line in stats.summary_lines():
        print(line)
    print(f"[stats] profile and histogram written to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    config = GatewayConfig.load(args.config)
    server = GatewayServer(Gateway(config))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shepherd", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("label", help="build a labeled dataset of minimum hint sizes")
    p.add_argument("--queries", required=True, help="JSONL with id/text/task_kind/ground_truth")
    p.add_argument("--backends", required=True, help="JSON config with slm/llm backend specs")
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=int, default=10, choices=(5, 10, 20, 25))
    p.add_argument("--reactive-samples", type=int, default=0, help="also collect K-sample SLM features")
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--outlier-threshold", type=int, default=5)
    p.add_argument("--keep-all", action="store_true", help="skip filtering")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the two-stage hint predictor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("proactive", "reactive"), default="proactive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--lambda-weight", type=float, default=0.5)
    p.add_argument("--ema-decay", type=float, default=0.999)
    p.add_argument("--embedding-dim", type=int, default=256)
    p.add_argument("--fusion-dim", type=int, default=32)
    p.add_argument("--head-hidden", type=int, default=64)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="grid-search alpha / eta_hint on a validation dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="labeled validation JSONL")
    p.add_argument("--mode", choices=("budget", "accuracy"), required=True)
    p.add_argument("--target", type=float, required=True, help="cost budget ($) or accuracy floor (0..1)")
    p.add_argument("--out", required=True, help="policy JSON output")
    p.add_argument("--report-dir", default="calibration")
    p.add_argument("--eta-max", type=int, default=0, help="cap the eta grid (0 = default grid)")
    p.add_argument("--eta-step", type=int, default=10)
    _add_cost_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="build the cost/accuracy/ACE report")
    p.add_argument("--outcomes", nargs="*", default=None, help="outcome JSONL file(s)")
    p.add_argument("--reference", default=None, help=f"published reference table: {sorted(TABLES)}")
    p.add_argument("--from-table", default=None, help="CSV with strategy,cost,accuracy rows")
    p.add_argument("--llm-cost", default=None)
    p.add_argument("--llm-accuracy", default=None)
    p.add_argument("--slm-accuracy", default=None)
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="end-to-end experiment on a synthetic trace")
    p.add_argument("--profile", default="gsm8k", help="preset name or profile JSON path")
    p.add_argument("-n", "--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--strategies", default="slm_only,llm_only,oracle,proactive,reactive")
    p.add_argument("--trials", type=int, default=1, help="majority-vote trials per query")
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--consensus-samples", type=int, default=3)
    p.add_argument("--consensus-quorum", type=int, default=2)
    p.add_argument("--out-dir", default="simulation")
    p.add_argument("--quiet", action="store_true")
    _add_cost_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", help="histogram and profile of a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--step", type=int, default=10, choices=(5, 10, 20, 25))
    p.add_argument("--profile-name", default="empirical")
    p.add_argument("--out-dir", default="stats")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the shepherding gateway")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShepherdError as exc:
        return _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
