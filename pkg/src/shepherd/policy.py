"""Policies: map predictions to decisions and execute them against backends.

Proactive flow: decide up front from query features alone, then either answer
with the SLM, fetch an n-token hint prefix from the LLM and let the SLM
complete, or escalate to a full LLM response. Reactive flow: sample the SLM
K times first; if a k-quorum of answers agrees, return the agreed answer at
zero LLM cost, otherwise fall through to the predictor with SLM-derived
features.

The decision boundary keeps the literal "hint at probability == alpha"
semantics, and predicted sizes are clamped into [0, N_max] before rounding.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum

from .backends import Backend, Usage, UsageLedger, generate
from .core import DecodingParams, Query, Role, extract_answer, get_tokenizer, render_prompt
from .labeling import LabeledExample
from .predictor import Prediction, TrainedModel


class DecisionVariant(str, Enum):
    SLM_ONLY = "slm_only"
    HINT = "hint"
    FULL_LLM = "full_llm"


@dataclass(frozen=True)
class Decision:
    variant: DecisionVariant
    hint_tokens: int = 0
    provenance: str = ""

    def __post_init__(self):
        if self.variant == DecisionVariant.HINT and self.hint_tokens <= 0:
            raise ValueError("hint decisions need a positive token budget")
        if self.variant != DecisionVariant.HINT and self.hint_tokens != 0:
            raise ValueError("only hint decisions carry a token budget")

    @classmethod
    def slm_only(cls, provenance: str = "") -> "Decision":
        return cls(DecisionVariant.SLM_ONLY, 0, provenance)

    @classmethod
    def hint(cls, n: int, provenance: str = "") -> "Decision":
        return cls(DecisionVariant.HINT, n, provenance)

    @classmethod
    def full_llm(cls, provenance: str = "") -> "Decision":
        return cls(DecisionVariant.FULL_LLM, 0, provenance)


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float = 0.5
    eta_hint: int = 256
    n_max: int = 4096
    consensus_samples: int = 3
    consensus_quorum: int = 2
    sample_temperature: float = 0.3
    sample_top_p: float = 0.95
    multisample_passes: int = 8

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")
        if not (0 < self.eta_hint <= self.n_max):
            raise ValueError("eta_hint must be in (0, n_max]")
        if not (1 <= self.consensus_quorum <= self.consensus_samples):
            raise ValueError("need 1 <= quorum k <= samples K")


def predicted_hint_size(size_log: float, n_max: int) -> int:
    """Round exp(r_hat) - 1 to the nearest integer, clipped into [0, n_max].

    The log-size is clamped before exponentiation so overflow is impossible;
    rounding is round-half-to-even.
    """
    r_hat = min(size_log, math.log1p(n_max))
    return int(round(min(max(math.expm1(r_hat), 0.0), float(n_max))))


def map_to_decision(pred: Prediction, cfg: PolicyConfig) -> Decision:
    """Decision rule: below-threshold probability answers with the SLM;
    otherwise round the predicted size and either hint (<= eta_hint) or
    escalate."""
    if pred.hint_prob < cfg.alpha:
        return Decision.slm_only("prob_below_alpha")
    n = predicted_hint_size(pred.size_log, cfg.n_max)
    if n == 0:
        return Decision.slm_only("predicted_size_zero")
    if n <= cfg.eta_hint:
        return Decision.hint(n, "size_within_eta")
    return Decision.full_llm("size_above_eta")


def consensus(answers: list[str], quorum: int) -> str | None:
    """The modal answer when it reaches the quorum, else None. Ties at the
    quorum break toward the earliest occurrence."""
    if not answers:
        raise ValueError("consensus needs at least one answer")
    if quorum > len(answers):
        raise ValueError("quorum cannot exceed the number of answers")
    counts = Counter(answers)
    best = max(counts.values())
    if best < quorum:
        return None
    for a in answers:
        if counts[a] == best:
            return a
    raise AssertionError("unreachable")


@dataclass
class Outcome:
    query_id: str
    decision: Decision
    final_text: str
    extracted_answer: str
    correct: bool | None
    slm_usage: Usage
    llm_usage: Usage
    dollars: Decimal
    decision_latency_ms: float = 0.0
    strategy: str = ""


def _prompt_for(backend: Backend, query: Query, hint_text: str | None = None):
    return get_tokenizer(backend.spec.tokenizer).tokenize(render_prompt(query.text, hint_text))


def _outcome_from_ledger(query: Query, decision: Decision, final_text: str, judge, ledger: UsageLedger) -> Outcome:
    answer = extract_answer(final_text, query.task_kind)
    correct = None
    if judge is not None and query.ground_truth is not None:
        correct = judge.judge(query, final_text) >= judge.threshold
    return Outcome(
        query_id=query.id,
        decision=decision,
        final_text=final_text,
        extracted_answer=answer,
        correct=correct,
        slm_usage=ledger.tokens_for(Role.SLM),
        llm_usage=ledger.tokens_for(Role.LLM),
        dollars=ledger.dollars(),
    )


def _execute_into(
    query: Query,
    decision: Decision,
    cfg: PolicyConfig,
    slm: Backend,
    llm: Backend,
    local: UsageLedger,
    completion_seed: int = 0,
) -> str:
    """Run a decision's backend calls, recording usage into `local`.

    Hints are generated deterministically (temperature 0, the same regime
    the labels were built under); SLM completions and full LLM escalations
    sample at the configured temperature with a fixed seed.
    """
    sample = DecodingParams(
        temperature=cfg.sample_temperature,
        top_p=cfg.sample_top_p,
        max_new_tokens=slm.spec.n_max,
        seed=completion_seed,
    )
    if decision.variant == DecisionVariant.SLM_ONLY:
        return generate(slm, _prompt_for(slm, query), sample, local).text
    if decision.variant == DecisionVariant.HINT:
        n = min(decision.hint_tokens, cfg.n_max)
        hint = generate(llm, _prompt_for(llm, query), DecodingParams(max_new_tokens=n), local)
        return generate(slm, _prompt_for(slm, query, hint.text), sample, local).text
    return generate(
        llm,
        _prompt_for(llm, query),
        DecodingParams(
            temperature=cfg.sample_temperature,
            top_p=cfg.sample_top_p,
            max_new_tokens=llm.spec.n_max,
            seed=completion_seed,
        ),
        local,
    ).text


def execute_decision(
    query: Query,
    decision: Decision,
    cfg: PolicyConfig,
    slm: Backend,
    llm: Backend,
    judge=None,
    ledger: UsageLedger | None = None,
    completion_seed: int = 0,
) -> Outcome:
    """Run a decision end to end and meter its cost."""
    local = UsageLedger()
    final = _execute_into(query, decision, cfg, slm, llm, local, completion_seed)
    outcome = _outcome_from_ledger(query, decision, final, judge, local)
    if ledger is not None:
        ledger.merge(local)
    return outcome


def run_proactive(
    query: Query,
    model: TrainedModel,
    cfg: PolicyConfig,
    slm: Backend,
    llm: Backend,
    judge=None,
    ledger: UsageLedger | None = None,
    seed_offset: int = 0,
) -> Outcome:
    """Decide before any SLM inference, then execute."""
    t0 = time.perf_counter()
    pred = model.predict(query)
    decision = map_to_decision(pred, cfg)
    latency_ms = (time.perf_counter() - t0) * 1000.0
    outcome = execute_decision(query, decision, cfg, slm, llm, judge, ledger, completion_seed=seed_offset)
    outcome.decision_latency_ms = latency_ms
    return outcome


def run_reactive(
    query: Query,
    model: TrainedModel,
    cfg: PolicyConfig,
    slm: Backend,
    llm: Backend,
    judge=None,
    ledger: UsageLedger | None = None,
    seed_offset: int = 0,
) -> Outcome:
    """Sample the SLM K times; short-circuit on consensus, else predict from
    the samples and escalate as decided.

    When consensus fails but the predictor still chooses the SLM, the modal
    sampled answer is returned without any further calls.
    """
    local = UsageLedger()
    samples = [
        generate(
            slm,
            _prompt_for(slm, query),
            DecodingParams(
                temperature=cfg.sample_temperature,
                top_p=cfg.sample_top_p,
                max_new_tokens=slm.spec.n_max,
                seed=seed_offset + i + 1,
            ),
            local,
            want_logprobs=True,
        )
        for i in range(cfg.consensus_samples)
    ]
    answers = [extract_answer(s.text, query.task_kind) for s in samples]

    t0 = time.perf_counter()
    agreed = consensus(answers, cfg.consensus_quorum)
    if agreed is not None:
        latency_ms = (time.perf_counter() - t0) * 1000.0
        final = next(s.text for s, a in zip(samples, answers) if a == agreed)
        outcome = _outcome_from_ledger(query, Decision.slm_only("consensus"), final, judge, local)
        outcome.decision_latency_ms = latency_ms
        if ledger is not None:
            ledger.merge(local)
        return outcome

    pred = model.predict(query, slm_samples=samples)
    decision = map_to_decision(pred, cfg)
    latency_ms = (time.perf_counter() - t0) * 1000.0

    if decision.variant == DecisionVariant.SLM_ONLY:
        counts = Counter(answers)
        best = max(counts.values())
        modal = next(a for a in answers if counts[a] == best)
        final = next(s.text for s, a in zip(samples, answers) if a == modal)
    else:
        final = _execute_into(query, decision, cfg, slm, llm, local, completion_seed=seed_offset)
    outcome = _outcome_from_ledger(query, decision, final, judge, local)
    outcome.decision_latency_ms = latency_ms
    if ledger is not None:
        ledger.merge(local)
    return outcome


def oracle_policy(example: LabeledExample) -> Decision:
    """Ground-truth decision from a labeled example."""
    if example.unsolvable:
        return Decision.full_llm("oracle")
    if example.n_star == 0:
        return Decision.slm_only("oracle")
    return Decision.hint(example.n_star, "oracle")


def slm_only_policy(example: LabeledExample) -> Decision:
    return Decision.slm_only("static")


def llm_only_policy(example: LabeledExample) -> Decision:
    return Decision.full_llm("static")


def fixed_fraction_policy(fraction: float):
    """Always request floor(fraction * full response length) hint tokens."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0, 1]")

    def policy(example: LabeledExample) -> Decision:
        n = int(fraction * example.full_llm_len)
        if n == 0:
            return Decision.slm_only("static_fraction_zero")
        return Decision.hint(n, f"static_fraction_{fraction}")

    return policy


def vote_outcomes(outcomes: list[Outcome], query: Query, judge=None) -> Outcome:
    """Majority vote over independent trials' final answers; usage and cost
    are the sums over all trials."""
    if not outcomes:
        raise ValueError("need at least one trial outcome")
    answers = [o.extracted_answer for o in outcomes]
    counts = Counter(answers)
    best = max(counts.values())
    winner = next(a for a in answers if counts[a] == best)
    final = next(o.final_text for o in outcomes if o.extracted_answer == winner)
    correct = None
    if judge is not None and query.ground_truth is not None:
        correct = judge.judge(query, final) >= judge.threshold
    return Outcome(
        query_id=query.id,
        decision=outcomes[0].decision,
        final_text=final,
        extracted_answer=winner,
        correct=correct,
        slm_usage=Usage(
            sum(o.slm_usage.input_tokens for o in outcomes),
            sum(o.slm_usage.output_tokens for o in outcomes),
        ),
        llm_usage=Usage(
            sum(o.llm_usage.input_tokens for o in outcomes),
            sum(o.llm_usage.output_tokens for o in outcomes),
        ),
        dollars=sum((o.dollars for o in outcomes), Decimal(0)),
        decision_latency_ms=sum(o.decision_latency_ms for o in outcomes),
        strategy=outcomes[0].strategy,
    )
