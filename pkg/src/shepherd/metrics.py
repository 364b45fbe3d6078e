"""Cost formulas, oracle-cost analysis, efficiency metrics, and policy
calibration.

All dollar arithmetic is exact decimal. The oracle cost closed forms per
query (with I = 1 when the SLM alone suffices, n* the minimum hint size,
L the full LLM response length, q the query length):

    route = (q*cs_in + out0*cs_out) * I + (1 - I) * (q*cl_in + L*cl_out)
    casc  = q*cs_in + out0*cs_out + (1 - I) * (q*cl_in + L*cl_out)
    shep  = q*[n*>0]*cl_in + n**cl_out + (q + n*)*cs_in + out_n*cs_out

Under a free SLM, shep <= route == casc for every query, with equality
exactly when n* is 0 or the full response length; `dominance_check`
asserts this over whole traces.

ACE normalizes accuracy gain over the SLM baseline by cost relative to the
LLM baseline: ACE = ((A - A_s) / (A_l - A_s)) / (C / C_l). The LLM-only
policy scores exactly 1 by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .core import CostModel
from .labeling import LabeledExample
from .policy import PolicyConfig, predicted_hint_size
from .predictor import Prediction


def shepherding_cost(
    q_len: int,
    n: int,
    cm: CostModel,
    aug_out_len: int = 0,
) -> Decimal:
    """Per-query cost of answering with an n-token hint (n = 0 charges the
    SLM terms only)."""
    if q_len < 0 or n < 0 or aug_out_len < 0:
        raise ValueError("token counts must be non-negative")
    cost = (q_len + n) * cm.slm_in + aug_out_len * cm.slm_out
    if n > 0:
        cost += q_len * cm.llm_in + n * cm.llm_out
    return cost


def llm_route_cost(q_len: int, full_len: int, cm: CostModel) -> Decimal:
    """Cost of a full LLM response (no SLM involvement)."""
    return q_len * cm.llm_in + full_len * cm.llm_out


@dataclass(frozen=True)
class OracleCosts:
    route: Decimal
    casc: Decimal
    shep: Decimal


def oracle_costs(
    q_len: int,
    full_len: int,
    n_star: int,
    cm: CostModel,
    slm_out_len_alone: int = 0,
    slm_out_len_hint: int = 0,
) -> OracleCosts:
    """Closed-form per-query oracle costs for routing, cascading, and
    shepherding."""
    i_s = 1 if n_star == 0 else 0
    llm_full = q_len * cm.llm_in + full_len * cm.llm_out
    slm_alone = q_len * cm.slm_in + slm_out_len_alone * cm.slm_out
    route = slm_alone * i_s + (1 - i_s) * llm_full
    casc = slm_alone + (1 - i_s) * llm_full
    shep = (
        q_len * (1 - i_s) * cm.llm_in
        + n_star * cm.llm_out
        + (q_len + n_star) * cm.slm_in
        + slm_out_len_hint * cm.slm_out
    )
    return OracleCosts(route=route, casc=casc, shep=shep)


def oracle_costs_for(example: LabeledExample, cm: CostModel) -> OracleCosts:
    return oracle_costs(
        q_len=example.q_len,
        full_len=example.full_llm_len,
        n_star=example.n_star,
        cm=cm,
        slm_out_len_alone=example.slm_out_len_alone,
        slm_out_len_hint=example.slm_out_len,
    )


@dataclass(frozen=True)
class DominanceReport:
    checked: int
    violations: tuple[str, ...]
    total_route: Decimal
    total_shep: Decimal

    @property
    def savings(self) -> Decimal:
        return self.total_route - self.total_shep

    @property
    def holds(self) -> bool:
        return not self.violations


def dominance_check(examples: list[LabeledExample], cm: CostModel) -> DominanceReport:
    """Verify shep <= route == casc per query under a free SLM.

    Violations are reported by query id; a correct implementation can never
    produce one, so the tuple doubles as an invariant check on whole traces.
    """
    if not cm.slm_is_free:
        raise ValueError("dominance analysis requires slm_in == slm_out == 0")
    violations = []
    total_route = Decimal(0)
    total_shep = Decimal(0)
    for ex in examples:
        oc = oracle_costs_for(ex, cm)
        if oc.route != oc.casc or oc.shep > oc.route:
            violations.append(ex.query.id)
        total_route += oc.route
        total_shep += oc.shep
    return DominanceReport(
        checked=len(examples),
        violations=tuple(violations),
        total_route=total_route,
        total_shep=total_shep,
    )


@dataclass(frozen=True)
class PolicySummary:
    """Aggregate accuracy and total cost for one strategy, plus the SLM/LLM
    baselines used for normalization."""

    accuracy: float
    total_cost: Decimal
    slm_accuracy: float
    llm_accuracy: float
    llm_cost: Decimal


def ace(summary: PolicySummary) -> float:
    """Accuracy gain per unit cost, both normalized against the baselines."""
    gain_denom = summary.llm_accuracy - summary.slm_accuracy
    if gain_denom <= 0:
        raise ValueError("ACE requires llm accuracy above slm accuracy")
    if summary.total_cost <= 0 or summary.llm_cost <= 0:
        raise ValueError("ACE requires positive costs")
    gain = (summary.accuracy - summary.slm_accuracy) / gain_denom
    cost_ratio = float(summary.total_cost) / float(summary.llm_cost)
    return gain / cost_ratio


def cost_reduction(cost: Decimal | float, llm_cost: Decimal | float) -> float:
    """Percent cost reduction relative to the LLM-only baseline."""
    llm = float(llm_cost)
    if llm <= 0:
        raise ValueError("cost reduction requires a positive llm baseline cost")
    return 100.0 * (1.0 - float(cost) / llm)


@dataclass(frozen=True)
class CalibrationPoint:
    """Everything needed to re-score one validation query for any (alpha,
    eta) combination without new backend calls."""

    q_len: int
    full_len: int
    n_star: int
    unsolvable: bool
    llm_correct: bool
    grid: tuple[int, ...]
    per_budget_correct: tuple[bool, ...]
    hint_prob: float
    size_log: float
    slm_out_len_alone: int = 0

    @classmethod
    def from_example(cls, example: LabeledExample, prediction: Prediction) -> "CalibrationPoint":
        return cls(
            q_len=example.q_len,
            full_len=example.full_llm_len,
            n_star=example.n_star,
            unsolvable=example.unsolvable,
            llm_correct=example.llm_correct,
            grid=example.grid,
            per_budget_correct=example.per_budget_correct,
            hint_prob=prediction.hint_prob,
            size_log=prediction.size_log,
            slm_out_len_alone=example.slm_out_len_alone,
        )


def correctness_at_budget(point: CalibrationPoint, n: int) -> bool:
    """Labeled correctness of a hint of n tokens: the flag of the largest
    grid budget not exceeding n (the full-response verdict at or beyond the
    full length)."""
    if n >= point.full_len and point.full_len > 0:
        return point.llm_correct
    flag = False
    for g, ok in zip(point.grid, point.per_budget_correct):
        if g <= n:
            flag = ok
        else:
            break
    return flag


@dataclass(frozen=True)
class GridCell:
    alpha: float
    eta: int
    accuracy: float
    cost: Decimal


@dataclass(frozen=True)
class CalibrationResult:
    feasible: bool
    alpha: float | None
    eta: int | None
    accuracy: float | None
    cost: Decimal | None
    frontier: tuple[GridCell, ...]


@dataclass(frozen=True)
class _ScoredPoint:
    """Per-point quantities that do not depend on (alpha, eta): the predicted
    size and the correctness/cost of each of the three possible decisions."""

    hint_prob: float
    n_hat: int
    ok_slm: bool
    ok_hint: bool
    ok_full: bool
    cost_slm: Decimal
    cost_hint: Decimal
    cost_full: Decimal


def _prepare(points: list[CalibrationPoint], cm: CostModel, n_max: int) -> list[_ScoredPoint]:
    scored = []
    for p in points:
        n_hat = predicted_hint_size(p.size_log, n_max)
        scored.append(
            _ScoredPoint(
                hint_prob=p.hint_prob,
                n_hat=n_hat,
                ok_slm=p.n_star == 0,
                ok_hint=correctness_at_budget(p, n_hat),
                ok_full=p.llm_correct,
                cost_slm=shepherding_cost(p.q_len, 0, cm, aug_out_len=p.slm_out_len_alone),
                cost_hint=shepherding_cost(p.q_len, n_hat, cm),
                cost_full=llm_route_cost(p.q_len, p.full_len, cm),
            )
        )
    return scored


def _score_cell(scored: list[_ScoredPoint], alpha: float, eta: int):
    correct_count = 0
    cost = Decimal(0)
    for s in scored:
        if s.hint_prob < alpha or s.n_hat == 0:
            correct_count += s.ok_slm
            cost += s.cost_slm
        elif s.n_hat <= eta:
            correct_count += s.ok_hint
            cost += s.cost_hint
        else:
            correct_count += s.ok_full
            cost += s.cost_full
    return correct_count / len(scored), cost


def default_alpha_grid() -> list[float]:
    return [round(a * 0.01, 2) for a in range(0, 101)]


def default_eta_grid(n_max: int) -> list[int]:
    return list(range(10, n_max + 1, 10))


def calibrate(
    points: list[CalibrationPoint],
    mode: str,
    target: Decimal | float,
    cm: CostModel,
    cfg: PolicyConfig | None = None,
    alphas: list[float] | None = None,
    etas: list[int] | None = None,
) -> CalibrationResult:
    """Grid search over (alpha, eta_hint) on precomputed validation points.

    mode "budget": maximize accuracy subject to cost <= target; ties break
    toward lower cost, then lower alpha, then lower eta. mode "accuracy":
    minimize cost subject to accuracy >= target; ties break toward higher
    accuracy, then lower alpha, then lower eta. An infeasible constraint
    reports feasible=False with the full frontier attached.
    """
    if not points:
        raise ValueError("calibration needs at least one validation point")
    if mode not in ("budget", "accuracy"):
        raise ValueError("mode must be 'budget' or 'accuracy'")
    cfg = cfg or PolicyConfig(eta_hint=256)
    alphas = default_alpha_grid() if alphas is None else alphas
    etas = default_eta_grid(cfg.n_max) if etas is None else etas

    scored = _prepare(points, cm, cfg.n_max)
    cells: list[GridCell] = []
    for alpha in alphas:
        for eta in etas:
            accuracy, cost = _score_cell(scored, alpha, eta)
            cells.append(GridCell(alpha=alpha, eta=eta, accuracy=accuracy, cost=cost))

    if mode == "budget":
        budget = Decimal(str(target)) if not isinstance(target, Decimal) else target
        feasible_cells = [c for c in cells if c.cost <= budget]
        key = lambda c: (-c.accuracy, c.cost, c.alpha, c.eta)
    else:
        floor = float(target)
        feasible_cells = [c for c in cells if c.accuracy >= floor]
        key = lambda c: (c.cost, -c.accuracy, c.alpha, c.eta)

    frontier = tuple(sorted(cells, key=lambda c: (c.cost, -c.accuracy, c.alpha, c.eta)))
    if not feasible_cells:
        return CalibrationResult(False, None, None, None, None, frontier)
    best = min(feasible_cells, key=key)
    return CalibrationResult(True, best.alpha, best.eta, best.accuracy, best.cost, frontier)
