"""Report assembly: strategy summaries, the cost/accuracy/ACE table, the
outcome JSON-lines log, and figure emission alongside the CSV output."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from . import figures
from .backends import Usage
from .core import SchemaError, money_str
from .metrics import PolicySummary, ace, cost_reduction
from .policy import Decision, DecisionVariant, Outcome
from .published import PublishedTable

EVAL_SCHEMA = "shepherd-eval/1"

SLM_BASELINE = "slm_only"
LLM_BASELINE = "llm_only"


@dataclass(frozen=True)
class ReportRow:
    strategy: str
    cost: Decimal
    accuracy: float  # percent
    cost_reduction_pct: float | None
    ace: float | None


def summarize_outcomes(outcomes: list[Outcome]) -> tuple[float, Decimal]:
    """(accuracy in percent, total cost) over judged outcomes."""
    if not outcomes:
        raise ValueError("cannot summarize an empty outcome list")
    judged = [o for o in outcomes if o.correct is not None]
    if not judged:
        raise ValueError("no outcome carries a correctness verdict")
    accuracy = 100.0 * sum(1 for o in judged if o.correct) / len(judged)
    total = sum((o.dollars for o in outcomes), Decimal(0))
    return accuracy, total


def evaluate_strategies(outcomes_by_strategy: dict[str, list[Outcome]]) -> list[ReportRow]:
    """One report row per strategy; ACE and cost reduction are normalized by
    the slm_only / llm_only baseline rows, which must be present."""
    if not outcomes_by_strategy:
        return []
    for required in (SLM_BASELINE, LLM_BASELINE):
        if required not in outcomes_by_strategy:
            raise ValueError(f"evaluation needs a {required!r} baseline strategy")
    slm_acc, _ = summarize_outcomes(outcomes_by_strategy[SLM_BASELINE])
    llm_acc, llm_cost = summarize_outcomes(outcomes_by_strategy[LLM_BASELINE])

    rows = []
    for name, outcomes in outcomes_by_strategy.items():
        accuracy, cost = summarize_outcomes(outcomes)
        row_ace = None
        if name != SLM_BASELINE and cost > 0 and llm_cost > 0 and llm_acc > slm_acc:
            row_ace = ace(PolicySummary(accuracy, cost, slm_acc, llm_acc, llm_cost))
        red = cost_reduction(cost, llm_cost) if llm_cost > 0 else None
        rows.append(ReportRow(strategy=name, cost=cost, accuracy=accuracy, cost_reduction_pct=red, ace=row_ace))
    return rows


def report_rows_from_published(table: PublishedTable) -> list[ReportRow]:
    """Recompute the derived columns of a published table from its raw
    (cost, accuracy) pairs and baselines."""
    rows = []
    for row in table.rows:
        summary = PolicySummary(
            accuracy=row.accuracy,
            total_cost=row.cost,
            slm_accuracy=table.slm_accuracy,
            llm_accuracy=table.llm_accuracy,
            llm_cost=table.llm_cost,
        )
        rows.append(
            ReportRow(
                strategy=row.strategy,
                cost=row.cost,
                accuracy=row.accuracy,
                cost_reduction_pct=cost_reduction(row.cost, table.llm_cost),
                ace=ace(summary),
            )
        )
    return rows


def report_rows_from_pairs(pairs: list[dict], llm_cost: Decimal, llm_accuracy: float, slm_accuracy: float) -> list[ReportRow]:
    """Rows from external (strategy, cost, accuracy) records, e.g. a CSV."""
    rows = []
    for rec in pairs:
        cost = Decimal(str(rec["cost"]))
        accuracy = float(rec["accuracy"])
        summary = PolicySummary(accuracy, cost, slm_accuracy, llm_accuracy, llm_cost)
        rows.append(
            ReportRow(
                strategy=str(rec["strategy"]),
                cost=cost,
                accuracy=accuracy,
                cost_reduction_pct=cost_reduction(cost, llm_cost),
                ace=ace(summary) if cost > 0 and llm_accuracy > slm_accuracy else None,
            )
        )
    return rows


def write_report_csv(path: str | Path, rows: list[ReportRow]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "cost_usd", "accuracy_pct", "cost_reduction_pct", "ace"])
        for row in rows:
            writer.writerow(
                [
                    row.strategy,
                    money_str(row.cost),
                    f"{row.accuracy:.1f}",
                    "" if row.cost_reduction_pct is None else f"{row.cost_reduction_pct:.1f}",
                    "" if row.ace is None else f"{row.ace:.2f}",
                ]
            )
    return path


def format_report_table(rows: list[ReportRow]) -> str:
    headers = ["Strategy", "Cost ($)", "Acc. (%)", "Cost red. (%)", "ACE"]
    body = []
    for row in rows:
        body.append(
            [
                row.strategy,
                money_str(row.cost.quantize(Decimal("0.000001"))) if isinstance(row.cost, Decimal) else str(row.cost),
                f"{row.accuracy:.1f}",
                "-" if row.cost_reduction_pct is None else f"{row.cost_reduction_pct:.1f}",
                "-" if row.ace is None else f"{row.ace:.2f}",
            ]
        )
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)


def save_report_figures(rows: list[ReportRow], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        figures.save_cost_accuracy(rows, out_dir / "cost_accuracy.png"),
        figures.save_ace_bars(rows, out_dir / "ace.png"),
    ]


def outcome_to_json(outcome: Outcome) -> dict:
    return {
        "schema": EVAL_SCHEMA,
        "query_id": outcome.query_id,
        "strategy": outcome.strategy,
        "decision": {
            "variant": outcome.decision.variant.value,
            "hint_tokens": outcome.decision.hint_tokens,
            "provenance": outcome.decision.provenance,
        },
        "answer": outcome.extracted_answer,
        "correct": outcome.correct,
        "usage": {
            "slm_in": outcome.slm_usage.input_tokens,
            "slm_out": outcome.slm_usage.output_tokens,
            "llm_in": outcome.llm_usage.input_tokens,
            "llm_out": outcome.llm_usage.output_tokens,
        },
        "dollars": money_str(outcome.dollars),
        "decision_latency_ms": outcome.decision_latency_ms,
    }


def outcome_from_json(data: dict) -> Outcome:
    if data.get("schema") != EVAL_SCHEMA:
        raise SchemaError(f"expected schema {EVAL_SCHEMA!r}, got {data.get('schema')!r}")
    d = data["decision"]
    u = data["usage"]
    return Outcome(
        query_id=data["query_id"],
        strategy=data.get("strategy", ""),
        decision=Decision(DecisionVariant(d["variant"]), int(d.get("hint_tokens", 0)), d.get("provenance", "")),
        final_text=data.get("answer", ""),
        extracted_answer=data.get("answer", ""),
        correct=data.get("correct"),
        slm_usage=Usage(int(u["slm_in"]), int(u["slm_out"])),
        llm_usage=Usage(int(u["llm_in"]), int(u["llm_out"])),
        dollars=Decimal(data["dollars"]),
        decision_latency_ms=float(data.get("decision_latency_ms", 0.0)),
    )


def write_outcomes(path: str | Path, outcomes: list[Outcome]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(json.dumps(outcome_to_json(outcome), sort_keys=True) + "\n")
    return path


def read_outcomes(path: str | Path) -> list[Outcome]:
    outcomes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                outcomes.append(outcome_from_json(json.loads(line)))
    return outcomes
