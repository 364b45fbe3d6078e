"""Synthetic workloads and the desk-scale experiment harness.

A synthetic trace scripts, per query, the true minimum hint size (snapped to
the labeling grid so supervision can be exact), an optional non-monotone
failure window above it, whether the full LLM response is itself correct,
and how diverse the SLM's sampled answers are. Mock backends then realize
those scripts deterministically, so the whole pipeline - labeling, training,
calibration, policy execution, reporting - runs end to end with no real
models and is reproducible from (profile, n, seed, config). Wall-clock
latency fields are the only non-reproducible outputs.

The built-in profiles mirror the two published supervision datasets: one
heavily skewed to no-hint queries (~81%), one more balanced (~47%) with a
substantial unsolvable tail (~8.7%). Bucket masses decay roughly
exponentially in both.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .backends import BackendKind, BackendSpec, MockBackend, UsageLedger
from .core import (
    DEFAULT_N_MAX,
    CostModel,
    DecodingParams,
    ExactMatchJudge,
    Query,
    Role,
    TaskKind,
    token_count,
)
from .features import Mode
from .labeling import (
    DatasetStats,
    LabeledExample,
    TraceProfile,
    dataset_stats,
    filter_dataset,
    grid_sizes,
    label_dataset,
)
from .metrics import CalibrationPoint, CalibrationResult, DominanceReport, calibrate, dominance_check
from .policy import (
    PolicyConfig,
    execute_decision,
    fixed_fraction_policy,
    llm_only_policy,
    oracle_policy,
    run_proactive,
    run_reactive,
    slm_only_policy,
    vote_outcomes,
)
from .predictor import PredictorConfig, TrainedModel
from .reporting import LLM_BASELINE, SLM_BASELINE, ReportRow, evaluate_strategies
from .training import feature_matrix, train

GSM8K_PROFILE = TraceProfile(
    name="gsm8k",
    p_zero=0.806,
    bucket_masses={
        10: 0.066,
        20: 0.030,
        30: 0.023,
        40: 0.015,
        50: 0.013,
        60: 0.0115,
        70: 0.0105,
        80: 0.008,
        90: 0.004,
    },
    p_unsolvable=0.013,
    q_len_median=120.0,
    q_len_sigma=0.4,
    out_len_median=250.0,
    out_len_sigma=0.5,
)

CNK12_PROFILE = TraceProfile(
    name="cnk12",
    p_zero=0.467,
    bucket_masses={
        10: 0.136,
        20: 0.081,
        30: 0.058,
        40: 0.045,
        50: 0.038,
        60: 0.030,
        70: 0.024,
        80: 0.020,
        90: 0.014,
    },
    p_unsolvable=0.087,
    q_len_median=120.0,
    q_len_sigma=0.4,
    out_len_median=250.0,
    out_len_sigma=0.5,
)

PROFILES: dict[str, TraceProfile] = {"gsm8k": GSM8K_PROFILE, "cnk12": CNK12_PROFILE}


def load_profile(name_or_path: str) -> TraceProfile:
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            return TraceProfile.from_json(json.load(fh))
    raise ValueError(f"unknown profile {name_or_path!r} (presets: {sorted(PROFILES)})")


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _word(k: int) -> str:
    # Digit-free filler words, so answer extraction only ever sees the
    # intentionally placed numbers.
    out = []
    k = abs(k)
    for _ in range(3):
        out.append(_LETTERS[k % 26])
        k //= 26
    return "x" + "".join(out)


_QID_RE = re.compile(r"\bq(\d{7})\b")


@dataclass
class SyntheticQuery:
    """One scripted query: lengths, true minimum hint size, and SLM/LLM
    behavior. quality(n) is true iff n >= n_star and n is outside the
    declared failure window."""

    index: int
    q_len: int
    full_len: int
    n_star: int
    unsolvable: bool
    ground_truth: str
    llm_correct: bool
    failure_window: tuple[int, int] | None = None
    agree_when_wrong: bool = False
    entropy: float = 0.1

    @property
    def qid(self) -> str:
        return f"q{self.index:07d}"

    @cached_property
    def query(self) -> Query:
        words = [self.qid] + [_word(self.index * 131 + j) for j in range(self.q_len - 1)]
        return Query.from_text(
            id=self.qid,
            text=" ".join(words),
            task_kind=TaskKind.MATH_NUMERIC,
            ground_truth=self.ground_truth,
        )

    @cached_property
    def llm_full_text(self) -> str:
        num = self.ground_truth if self.llm_correct else str(int(self.ground_truth) + 13)
        words = [_word(self.index * 277 + j) for j in range(max(self.full_len - 1, 0))] + [num]
        return " ".join(words)

    def slm_text(self, correct: bool, seed: int | None, temperature: float) -> str:
        if correct:
            words = [_word(self.index * 613 + j) for j in range(7)] + [self.ground_truth]
            return " ".join(words)
        gt = int(self.ground_truth)
        if temperature > 0 and seed is not None and not self.agree_when_wrong:
            wrong = gt + 29 + seed
        else:
            wrong = gt + 29
        difficulty = min(self.n_star / self.full_len, 1.0) if self.full_len else 1.0
        n_fill = 10 + int(20 * difficulty)
        words = [_word(self.index * 401 + j) for j in range(n_fill)] + [str(wrong)]
        return " ".join(words)


def synth_quality(sq: SyntheticQuery, n: int) -> bool:
    """Scripted hint-quality step function with an optional failure window."""
    if n < 0:
        raise ValueError("hint size must be non-negative")
    if n < sq.n_star:
        return False
    if sq.failure_window is not None:
        lo, hi = sq.failure_window
        if lo <= n <= hi:
            return False
    return True


def generate_trace(
    profile: TraceProfile,
    n: int,
    seed: int,
    step_pct: int = 10,
    failure_window_rate: float = 0.05,
    llm_wrong_rate: float = 0.25,
    agree_when_wrong_rate: float = 0.0,
    length_difficulty_coupling: float = 0.8,
    off_grid: bool = False,
) -> list[SyntheticQuery]:
    """Draw n scripted queries from a profile, deterministically per seed.

    True n_star values are snapped to the step_pct labeling grid of each
    scripted response length unless off_grid is set (off-grid mode measures
    grid-approximation slack). llm_wrong_rate applies only to unsolvable
    queries, exercising the drop-rule for samples no hint can fix.
    Harder queries are drawn longer (length_difficulty_coupling), so query
    length carries signal for proactive policies.
    """
    rng = np.random.default_rng(seed)
    buckets = sorted(profile.bucket_masses)
    categories = [0] + buckets + [100]  # 0 = no hint, 100 = unsolvable
    masses = np.array([profile.p_zero] + [profile.bucket_masses[b] for b in buckets] + [profile.p_unsolvable])
    masses = masses / masses.sum()

    q_lens = np.maximum(rng.lognormal(math.log(profile.q_len_median), profile.q_len_sigma, size=n), 4.0)
    full_lens = np.clip(rng.lognormal(math.log(profile.out_len_median), profile.out_len_sigma, size=n), 20.0, 3500.0)
    cats = rng.choice(len(categories), size=n, p=masses)
    u_window = rng.random(n)
    u_llm_wrong = rng.random(n)
    u_agree = rng.random(n)

    trace: list[SyntheticQuery] = []
    for i in range(n):
        cat_frac = categories[cats[i]] / 100.0
        q_len = int(q_lens[i] * (1.0 + length_difficulty_coupling * cat_frac))
        full_len = int(full_lens[i])
        cat = categories[cats[i]]
        grid = grid_sizes(full_len, step_pct)
        if cat == 0:
            n_star, unsolvable = 0, False
        elif cat == 100:
            n_star, unsolvable = full_len, True
        else:
            hi = cat * full_len // 100
            if off_grid:
                lo = (cat - step_pct) * full_len // 100 + 1
                n_star = int(rng.integers(lo, hi + 1))
            else:
                n_star = hi
            n_star, unsolvable = max(n_star, 1), False

        window = None
        if not unsolvable and n_star > 0 and u_window[i] < failure_window_rate:
            above = [g for g in grid if g > n_star]
            if above:
                j = int(rng.integers(0, len(above)))
                lo = above[j]
                hi_w = above[j + 1] - 1 if j + 1 < len(above) else lo + max(full_len * step_pct // 100, 1) - 1
                window = (lo, min(hi_w, full_len - 1))

        llm_correct = not (unsolvable and u_llm_wrong[i] < llm_wrong_rate)
        entropy = 0.08 if n_star == 0 else 0.35 + 1.2 * min(n_star / full_len, 1.0)
        trace.append(
            SyntheticQuery(
                index=i,
                q_len=q_len,
                full_len=full_len,
                n_star=n_star,
                unsolvable=unsolvable,
                ground_truth=str(10007 + i),
                llm_correct=llm_correct,
                failure_window=window,
                agree_when_wrong=bool(u_agree[i] < agree_when_wrong_rate),
                entropy=float(entropy),
            )
        )
    return trace


_HINT_SPLIT = "\nHint: "


def build_backends(
    trace: list[SyntheticQuery],
    cm: CostModel,
    n_max: int = DEFAULT_N_MAX,
) -> tuple[MockBackend, MockBackend]:
    """Mock SLM/LLM pair realizing a trace's scripts.

    The SLM responder locates the query by id inside the prompt, counts the
    hint tokens after the "Hint:" marker with the built-in tokenizer, and
    answers correctly iff the scripted quality function passes at that hint
    size.
    """
    by_qid = {sq.qid: sq for sq in trace}

    def lookup(prompt_text: str) -> SyntheticQuery:
        m = _QID_RE.search(prompt_text)
        if m is None or f"q{m.group(1)}" not in by_qid:
            raise ValueError(f"prompt does not reference a scripted query: {prompt_text[:80]!r}")
        return by_qid[f"q{m.group(1)}"]

    def slm_responder(prompt_text: str, params: DecodingParams):
        sq = lookup(prompt_text)
        if _HINT_SPLIT in prompt_text:
            hint_text = prompt_text.split(_HINT_SPLIT, 1)[1]
            n_hint = token_count(hint_text)
        else:
            n_hint = 0
        ok = synth_quality(sq, n_hint)
        return sq.slm_text(ok, params.seed, params.temperature), sq.entropy

    def llm_responder(prompt_text: str, params: DecodingParams):
        return lookup(prompt_text).llm_full_text

    slm = MockBackend(
        BackendSpec(
            kind=BackendKind.MOCK,
            model_name="mock-slm",
            role=Role.SLM,
            prices=cm.prices_for(Role.SLM),
            n_max=n_max,
        ),
        responder=slm_responder,
    )
    llm = MockBackend(
        BackendSpec(
            kind=BackendKind.MOCK,
            model_name="mock-llm",
            role=Role.LLM,
            prices=cm.prices_for(Role.LLM),
            n_max=n_max,
        ),
        responder=llm_responder,
    )
    return slm, llm


@dataclass
class ExperimentConfig:
    strategies: tuple[str, ...] = (SLM_BASELINE, LLM_BASELINE, "oracle", "proactive", "reactive")
    step_pct: int = 10
    outlier_threshold: int = 5
    reactive_samples: int = 3
    consensus_quorum: int = 2
    alpha: float = 0.5
    eta_hint: int | None = None  # None = calibrate or derive from the trace
    calibrate_mode: str | None = "accuracy"  # None disables calibration
    accuracy_floor_frac: float = 0.9
    trials: int = 1
    failure_window_rate: float = 0.05
    llm_wrong_rate: float = 0.25
    epochs: int = 25
    embedding_dim: int = 64
    fusion_dim: int = 16
    head_hidden: int = 32
    label_workers: int = 8


@dataclass
class ExperimentResult:
    profile_name: str
    n_queries: int
    seed: int
    stats: DatasetStats
    dominance: DominanceReport | None
    rows: list[ReportRow]
    outcomes: dict[str, list]
    calibrations: dict[str, CalibrationResult]
    models: dict[str, TrainedModel]
    examples: list[LabeledExample]
    dropped: int
    skipped: int
    ledger: UsageLedger


def _split_indices(n: int, seed: int) -> tuple[list[int], list[int], list[int]]:
    idx = list(range(n))
    np.random.default_rng(seed + 1).shuffle(idx)
    n_train = max(1, int(n * 0.6))
    n_val = max(1, int(n * 0.2))
    return idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :]


def _calibration_points(model: TrainedModel, examples: list[LabeledExample]) -> list[CalibrationPoint]:
    xf_raw = feature_matrix(examples, model.mode)
    preds = model.predict_arrays(xf_raw, [e.query.text for e in examples])
    return [CalibrationPoint.from_example(ex, pred) for ex, pred in zip(examples, preds)]


def run_experiment(
    profile: TraceProfile,
    n: int,
    seed: int,
    cm: CostModel,
    config: ExperimentConfig | None = None,
    verbose: bool = False,
) -> ExperimentResult:
    """Label a synthetic trace, train/calibrate the predictor, execute every
    requested strategy on the held-out split, and assemble the report."""
    config = config or ExperimentConfig()
    judge = ExactMatchJudge()

    trace = generate_trace(
        profile,
        n,
        seed,
        step_pct=config.step_pct,
        failure_window_rate=config.failure_window_rate,
        llm_wrong_rate=config.llm_wrong_rate,
    )
    slm, llm = build_backends(trace, cm)
    ledger = UsageLedger()

    examples, skipped = label_dataset(
        [sq.query for sq in trace],
        slm,
        llm,
        judge,
        step_pct=config.step_pct,
        ledger=ledger,
        reactive_samples=config.reactive_samples,
        workers=config.label_workers,
    )
    kept, dropped = filter_dataset(examples, config.outlier_threshold)
    if not kept:
        raise ValueError("no labeled examples survived filtering; trace too small?")
    stats = dataset_stats(kept, config.step_pct)
    dominance = dominance_check(kept, cm) if cm.slm_is_free else None

    train_idx, val_idx, test_idx = _split_indices(len(kept), seed)
    train_split = [kept[i] for i in train_idx]
    val_split = [kept[i] for i in val_idx]
    test_split = [kept[i] for i in test_idx] or val_split

    max_full = max(e.full_llm_len for e in kept)
    eta_cap = min(DEFAULT_N_MAX, (max_full // 10 + 1) * 10)
    default_eta = config.eta_hint or max(10, (int(0.4 * max_full) // 10) * 10)

    needs_model = [s for s in ("proactive", "reactive") if s in config.strategies]
    models: dict[str, TrainedModel] = {}
    calibrations: dict[str, CalibrationResult] = {}
    policy_cfgs: dict[str, PolicyConfig] = {}
    for mode_name in needs_model:
        mode = Mode(mode_name)
        pcfg = PredictorConfig(
            mode=mode,
            embedding_dim=config.embedding_dim,
            fusion_dim=config.fusion_dim,
            head_hidden=config.head_hidden,
            epochs=config.epochs,
            seed=seed,
        )
        model = train(train_split, val_split, pcfg, verbose=verbose)
        models[mode_name] = model

        alpha, eta = config.alpha, default_eta
        if config.calibrate_mode is not None:
            points = _calibration_points(model, val_split)
            llm_val_acc = sum(1 for e in val_split if e.llm_correct) / len(val_split)
            target = (
                config.accuracy_floor_frac * llm_val_acc
                if config.calibrate_mode == "accuracy"
                else config.accuracy_floor_frac
            )
            # Cap the eta grid at ~40 cells so the sweep stays fast on
            # long-response traces.
            eta_step = 10 * max(1, math.ceil(eta_cap / 400))
            result = calibrate(
                points,
                mode=config.calibrate_mode,
                target=target,
                cm=cm,
                cfg=PolicyConfig(eta_hint=eta_cap, n_max=DEFAULT_N_MAX),
                etas=list(range(10, eta_cap + 1, eta_step)),
            )
            calibrations[mode_name] = result
            if result.feasible:
                alpha, eta = result.alpha, result.eta
            else:
                best = min(result.frontier, key=lambda c: (-c.accuracy, c.cost))
                alpha, eta = best.alpha, best.eta
        policy_cfgs[mode_name] = PolicyConfig(
            alpha=alpha,
            eta_hint=eta,
            n_max=DEFAULT_N_MAX,
            consensus_samples=config.reactive_samples,
            consensus_quorum=config.consensus_quorum,
        )

    static_cfg = PolicyConfig(
        eta_hint=eta_cap,
        n_max=DEFAULT_N_MAX,
        consensus_samples=config.reactive_samples,
        consensus_quorum=config.consensus_quorum,
    )
    static_policies = {
        SLM_BASELINE: slm_only_policy,
        LLM_BASELINE: llm_only_policy,
        "oracle": oracle_policy,
    }

    strategy_names = list(dict.fromkeys(list(config.strategies) + [SLM_BASELINE, LLM_BASELINE]))
    outcomes_by_strategy: dict[str, list] = {}
    for name in strategy_names:
        outcomes = []
        for ex in test_split:
            if name in static_policies:
                decision = static_policies[name](ex)
                outcome = execute_decision(ex.query, decision, static_cfg, slm, llm, judge, ledger)
            elif name.startswith("fixed_fraction"):
                frac = float(name.split(":", 1)[1]) if ":" in name else 0.3
                decision = fixed_fraction_policy(frac)(ex)
                outcome = execute_decision(ex.query, decision, static_cfg, slm, llm, judge, ledger)
            elif name in ("proactive", "reactive"):
                runner = run_proactive if name == "proactive" else run_reactive
                if config.trials > 1:
                    trials = [
                        runner(ex.query, models[name], policy_cfgs[name], slm, llm, judge, ledger, seed_offset=t * 1000)
                        for t in range(config.trials)
                    ]
                    outcome = vote_outcomes(trials, ex.query, judge)
                else:
                    outcome = runner(ex.query, models[name], policy_cfgs[name], slm, llm, judge, ledger)
            else:
                raise ValueError(f"unknown strategy {name!r}")
            outcome.strategy = name
            outcomes.append(outcome)
        outcomes_by_strategy[name] = outcomes
        if verbose:
            print(f"[experiment] strategy={name} queries={len(outcomes)}")

    rows = evaluate_strategies(outcomes_by_strategy)
    return ExperimentResult(
        profile_name=profile.name,
        n_queries=n,
        seed=seed,
        stats=stats,
        dominance=dominance,
        rows=rows,
        outcomes=outcomes_by_strategy,
        calibrations=calibrations,
        models=models,
        examples=kept,
        dropped=len(dropped),
        skipped=len(skipped),
        ledger=ledger,
    )
