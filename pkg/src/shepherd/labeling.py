"""Supervision labeling: discretized minimum hint sizes, outlier filtering,
and dataset statistics.

Each query is labeled by probing budget-truncated hints at percentage sizes
of the full reference completion (0%..90% by default) and recording the
smallest budget whose hint makes the small model's answer satisfactory. If
no partial budget succeeds, the query is marked unsolvable and its label
falls back to the full completion length.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .backends import Backend, BackendError, MockBackend, UsageLedger, generate
from .core import DecodingParams, Query, SchemaError, TaskKind, get_tokenizer, prefix, render_prompt
from .features import summarize_slm_samples

LABEL_SCHEMA = "shepherd-label/1"
VALID_STEPS = (5, 10, 20, 25)
OUTLIER_CONFIGURATIONS = 11  # ten grid budgets plus the full response


def grid_sizes(full_len: int, step_pct: int = 10) -> list[int]:
    """Ascending deduplicated token budgets floor(p/100 * full_len) for
    p = 0, step, 2*step, ... below 100."""
    if step_pct not in VALID_STEPS:
        raise ValueError(f"step_pct must be one of {VALID_STEPS}, got {step_pct}")
    if full_len < 0:
        raise ValueError("full_len must be >= 0")
    sizes = sorted({p * full_len // 100 for p in range(0, 100, step_pct)})
    return sizes


def minority_count(flags: list[bool]) -> int:
    """Count of flags belonging to the minority class."""
    trues = sum(flags)
    return min(trues, len(flags) - trues)


def outlier_count(flags: list[bool]) -> int:
    """Minority-class count over the eleven hint-size configurations."""
    if len(flags) != OUTLIER_CONFIGURATIONS:
        raise ValueError(f"expected {OUTLIER_CONFIGURATIONS} flags, got {len(flags)}")
    return minority_count(flags)


@dataclass(frozen=True)
class LabeledExample:
    """A query with its discretized minimum hint size and per-budget flags.

    ``per_budget_correct[i]`` is the judge verdict with a hint of ``grid[i]``
    tokens; ``llm_correct`` is the verdict on the full reference completion.
    ``slm_out_len`` / ``slm_out_len_alone`` record the small model's output
    lengths at the labeled budget and at budget zero (used in cost math when
    the small model is not free). ``avg_entropy`` / ``avg_output_len`` are
    present only when the labeler also sampled the SLM for reactive features.
    """

    query: Query
    full_llm_len: int
    grid: tuple[int, ...]
    per_budget_correct: tuple[bool, ...]
    n_star: int
    y: bool
    r: float
    unsolvable: bool
    llm_correct: bool
    outlier_count: int
    slm_out_len: int = 0
    slm_out_len_alone: int = 0
    avg_entropy: float | None = None
    avg_output_len: float | None = None

    def __post_init__(self):
        if len(self.grid) != len(self.per_budget_correct):
            raise ValueError("grid and per_budget_correct must have equal length")
        if self.y != (self.n_star > 0):
            raise ValueError("y must equal (n_star > 0)")
        if not math.isclose(self.r, math.log1p(self.n_star), rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("r must equal log(1 + n_star)")
        if self.unsolvable and self.n_star != self.full_llm_len:
            raise ValueError("unsolvable examples must carry n_star == full_llm_len")

    @property
    def q_len(self) -> int:
        return len(self.query.prompt)


def _slm_prompt(slm: Backend, query: Query, hint_text: str | None):
    text = render_prompt(query.text, hint_text)
    return get_tokenizer(slm.spec.tokenizer).tokenize(text)


def label_query(
    query: Query,
    slm: Backend,
    llm: Backend,
    judge,
    step_pct: int = 10,
    ledger: UsageLedger | None = None,
    reactive_samples: int = 0,
    sample_temperature: float = 0.3,
    sample_top_p: float = 0.95,
) -> LabeledExample:
    """Label one query against the given backends.

    All hint and completion calls use deterministic decoding (temperature 0)
    so labels are a pure function of the backends. Against a mock the full
    completion is fetched once and prefix-sliced locally (exact by the mock's
    prefix property); against HTTP backends every budget is a fresh call.
    """
    if query.ground_truth is None:
        raise ValueError(f"query {query.id!r} needs a ground truth to be labeled")

    llm_prompt = get_tokenizer(llm.spec.tokenizer).tokenize(render_prompt(query.text))
    full = generate(llm, llm_prompt, DecodingParams(max_new_tokens=llm.spec.n_max), ledger)
    full_len = len(full.tokens)
    grid = grid_sizes(full_len, step_pct)
    slice_locally = isinstance(llm, MockBackend)

    flags: list[bool] = []
    slm_out_lens: list[int] = []
    for n_p in grid:
        if n_p == 0:
            hint_text = None
        elif slice_locally:
            hint_text = prefix(full.tokens, n_p).text
        else:
            hint = generate(llm, llm_prompt, DecodingParams(max_new_tokens=n_p), ledger)
            hint_text = hint.text
        resp = generate(slm, _slm_prompt(slm, query, hint_text), DecodingParams(max_new_tokens=slm.spec.n_max), ledger)
        flags.append(judge.judge(query, resp.text) >= judge.threshold)
        slm_out_lens.append(len(resp.tokens))

    first_pass = next((i for i, ok in enumerate(flags) if ok), None)
    if first_pass is None:
        unsolvable = True
        n_star = full_len
        slm_out_len = 0
    else:
        unsolvable = False
        n_star = grid[first_pass]
        slm_out_len = slm_out_lens[first_pass]
    llm_correct = judge.judge(query, full.text) >= judge.threshold

    avg_entropy = avg_output_len = None
    if reactive_samples > 0:
        samples = [
            generate(
                slm,
                _slm_prompt(slm, query, None),
                DecodingParams(
                    temperature=sample_temperature,
                    top_p=sample_top_p,
                    max_new_tokens=slm.spec.n_max,
                    seed=i + 1,
                ),
                ledger,
                want_logprobs=True,
            )
            for i in range(reactive_samples)
        ]
        avg_entropy, avg_output_len = summarize_slm_samples(query, samples)

    return LabeledExample(
        query=query,
        full_llm_len=full_len,
        grid=tuple(grid),
        per_budget_correct=tuple(flags),
        n_star=n_star,
        y=n_star > 0,
        r=math.log1p(n_star),
        unsolvable=unsolvable,
        llm_correct=llm_correct,
        outlier_count=minority_count(flags + [llm_correct]),
        slm_out_len=slm_out_len,
        slm_out_len_alone=slm_out_lens[0] if slm_out_lens else 0,
        avg_entropy=avg_entropy,
        avg_output_len=avg_output_len,
    )


def label_dataset(
    queries: list[Query],
    slm: Backend,
    llm: Backend,
    judge,
    step_pct: int = 10,
    ledger: UsageLedger | None = None,
    reactive_samples: int = 0,
    workers: int = 8,
) -> tuple[list[LabeledExample], list[tuple[str, str]]]:
    """Label queries independently (bounded parallelism), merging results in
    input order. Queries whose backends fail after retries are skipped with
    the reason recorded."""

    def one(query: Query):
        try:
            return label_query(
                query, slm, llm, judge, step_pct=step_pct, ledger=ledger, reactive_samples=reactive_samples
            )
        except BackendError as exc:
            return (query.id, f"backend failure: {exc}")

    if workers <= 1:
        results = [one(q) for q in queries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, queries))

    examples: list[LabeledExample] = []
    skipped: list[tuple[str, str]] = []
    for res in results:
        if isinstance(res, LabeledExample):
            examples.append(res)
        else:
            skipped.append(res)
    return examples, skipped


REASON_LLM_INCORRECT = "llm_incorrect_no_hint_helps"
REASON_OUTLIER = "outlier_count_at_threshold"


def filter_dataset(
    examples: list[LabeledExample],
    outlier_threshold: int = 5,
) -> tuple[list[LabeledExample], list[tuple[LabeledExample, str]]]:
    """Drop examples where no hint helps and the full completion is also
    wrong, and examples whose outcomes flip across budgets too often."""
    kept: list[LabeledExample] = []
    dropped: list[tuple[LabeledExample, str]] = []
    for ex in examples:
        if ex.unsolvable and not ex.llm_correct:
            dropped.append((ex, REASON_LLM_INCORRECT))
        elif ex.outlier_count >= outlier_threshold:
            dropped.append((ex, f"{REASON_OUTLIER}:{ex.outlier_count}"))
        else:
            kept.append(ex)
    return kept, dropped


@dataclass(frozen=True)
class TraceProfile:
    """Shape of a minimum-hint-size distribution plus length distributions.

    ``bucket_masses`` maps the percentage bucket (10..90) to its probability
    mass; together with ``p_zero`` and ``p_unsolvable`` the masses must sum
    to 1. Lengths are log-normal, parameterized by median and log-sigma.
    """

    name: str
    p_zero: float
    bucket_masses: dict[int, float]
    p_unsolvable: float
    q_len_median: float = 120.0
    q_len_sigma: float = 0.4
    out_len_median: float = 250.0
    out_len_sigma: float = 0.5

    def __post_init__(self):
        total = self.p_zero + self.p_unsolvable + sum(self.bucket_masses.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"profile masses sum to {total}, expected 1")
        if any(m < 0 for m in self.bucket_masses.values()) or self.p_zero < 0 or self.p_unsolvable < 0:
            raise ValueError("profile masses must be non-negative")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "p_zero": self.p_zero,
            "bucket_masses": {str(k): v for k, v in self.bucket_masses.items()},
            "p_unsolvable": self.p_unsolvable,
            "q_len_median": self.q_len_median,
            "q_len_sigma": self.q_len_sigma,
            "out_len_median": self.out_len_median,
            "out_len_sigma": self.out_len_sigma,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TraceProfile":
        return cls(
            name=data["name"],
            p_zero=float(data["p_zero"]),
            bucket_masses={int(k): float(v) for k, v in data["bucket_masses"].items()},
            p_unsolvable=float(data["p_unsolvable"]),
            q_len_median=float(data.get("q_len_median", 120.0)),
            q_len_sigma=float(data.get("q_len_sigma", 0.4)),
            out_len_median=float(data.get("out_len_median", 250.0)),
            out_len_sigma=float(data.get("out_len_sigma", 0.5)),
        )


def bucket_for(n_star: int, full_len: int, step_pct: int = 10) -> int:
    """Smallest percentage bucket whose budget covers n_star."""
    for p in range(step_pct, 100, step_pct):
        if p * full_len // 100 >= n_star:
            return p
    return 100 - step_pct


@dataclass(frozen=True)
class DatasetStats:
    n_examples: int
    p_zero: float
    bucket_masses: dict[int, float]
    p_unsolvable: float
    positive_std: float
    mean_q_len: float
    mean_full_len: float

    def summary_lines(self) -> list[str]:
        lines = [
            f"examples:            {self.n_examples}",
            f"no hint needed:      {self.p_zero:.1%}",
            f"unsolvable:          {self.p_unsolvable:.1%}",
            f"std of hint sizes:   {self.positive_std:.1f} tokens",
            f"mean query length:   {self.mean_q_len:.1f} tokens",
            f"mean response len:   {self.mean_full_len:.1f} tokens",
        ]
        for p in sorted(self.bucket_masses):
            lines.append(f"bucket {p:>2d}%:          {self.bucket_masses[p]:.1%}")
        return lines


def dataset_stats(examples: list[LabeledExample], step_pct: int = 10) -> DatasetStats:
    if not examples:
        raise ValueError("dataset_stats needs a non-empty dataset")
    n = len(examples)
    zeros = sum(1 for e in examples if e.n_star == 0 and not e.unsolvable)
    unsolvable = sum(1 for e in examples if e.unsolvable)
    buckets = {p: 0 for p in range(step_pct, 100, step_pct)}
    positives = []
    for e in examples:
        if e.unsolvable or e.n_star == 0:
            continue
        buckets[bucket_for(e.n_star, e.full_llm_len, step_pct)] += 1
        positives.append(e.n_star)
    if positives:
        mean = sum(positives) / len(positives)
        positive_std = math.sqrt(sum((v - mean) ** 2 for v in positives) / len(positives))
    else:
        positive_std = 0.0
    return DatasetStats(
        n_examples=n,
        p_zero=zeros / n,
        bucket_masses={p: c / n for p, c in buckets.items()},
        p_unsolvable=unsolvable / n,
        positive_std=positive_std,
        mean_q_len=sum(e.q_len for e in examples) / n,
        mean_full_len=sum(e.full_llm_len for e in examples) / n,
    )


def stats_to_profile(stats: DatasetStats, name: str = "empirical") -> TraceProfile:
    # Renormalize away float drift so the profile invariant holds exactly.
    total = stats.p_zero + stats.p_unsolvable + sum(stats.bucket_masses.values())
    scale = 1.0 / total if total > 0 else 1.0
    bucket_masses = {p: m * scale for p, m in stats.bucket_masses.items()}
    residual = 1.0 - stats.p_zero * scale - stats.p_unsolvable * scale - sum(bucket_masses.values())
    p_zero = stats.p_zero * scale + residual
    return TraceProfile(
        name=name,
        p_zero=p_zero,
        bucket_masses=bucket_masses,
        p_unsolvable=stats.p_unsolvable * scale,
        q_len_median=stats.mean_q_len or 120.0,
        out_len_median=stats.mean_full_len or 250.0,
    )


def example_to_json(example: LabeledExample) -> dict:
    return {
        "schema": LABEL_SCHEMA,
        "id": example.query.id,
        "query": {
            "text": example.query.text,
            "task_kind": example.query.task_kind.value,
            "ground_truth": example.query.ground_truth,
        },
        "full_llm_len": example.full_llm_len,
        "grid": list(example.grid),
        "per_budget_correct": list(example.per_budget_correct),
        "n_star": example.n_star,
        "y": example.y,
        "r": example.r,
        "unsolvable": example.unsolvable,
        "llm_correct": example.llm_correct,
        "outlier_count": example.outlier_count,
        "slm_out_len": example.slm_out_len,
        "slm_out_len_alone": example.slm_out_len_alone,
        "avg_entropy": example.avg_entropy,
        "avg_output_len": example.avg_output_len,
    }


def example_from_json(data: dict) -> LabeledExample:
    if data.get("schema") != LABEL_SCHEMA:
        raise SchemaError(f"expected schema {LABEL_SCHEMA!r}, got {data.get('schema')!r}")
    q = data["query"]
    query = Query.from_text(
        id=data["id"],
        text=q["text"],
        task_kind=TaskKind(q["task_kind"]),
        ground_truth=q.get("ground_truth"),
    )
    return LabeledExample(
        query=query,
        full_llm_len=int(data["full_llm_len"]),
        grid=tuple(int(v) for v in data["grid"]),
        per_budget_correct=tuple(bool(v) for v in data["per_budget_correct"]),
        n_star=int(data["n_star"]),
        y=bool(data["y"]),
        r=float(data["r"]),
        unsolvable=bool(data["unsolvable"]),
        llm_correct=bool(data["llm_correct"]),
        outlier_count=int(data["outlier_count"]),
        slm_out_len=int(data.get("slm_out_len", 0)),
        slm_out_len_alone=int(data.get("slm_out_len_alone", 0)),
        avg_entropy=data.get("avg_entropy"),
        avg_output_len=data.get("avg_output_len"),
    )


def write_labeled_dataset(path: str | Path, examples: list[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_json(ex), sort_keys=True) + "\n")


def read_labeled_dataset(path: str | Path) -> list[LabeledExample]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(example_from_json(json.loads(line)))
    return examples
