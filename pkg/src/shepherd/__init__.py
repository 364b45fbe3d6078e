"""Cost-aware SLM/LLM collaborative inference.

Instead of treating the large model as all-or-nothing, policies here may
request just the first n tokens of its response (a hint) and let the small
model complete from it. The package covers the full lifecycle: supervision
labeling, predictor training, threshold calibration, cost/efficiency
metrics, synthetic-trace simulation, and a serving gateway.
"""

from .backends import (
    BackendKind,
    BackendSpec,
    FinishReason,
    GenerationResult,
    HttpBackend,
    MockBackend,
    MockScript,
    Usage,
    UsageLedger,
    build_completion_request,
    generate,
    record_usage,
)
from .core import (
    DEFAULT_COST_MODEL,
    DEFAULT_N_MAX,
    CostModel,
    DecodingParams,
    ExactMatchJudge,
    Query,
    Role,
    TaskKind,
    TokenPrices,
    TokenSequence,
    concat,
    extract_answer,
    money_str,
    per_million,
    prefix,
    render_prompt,
    token_count,
    tokenize,
)
from .features import FeatureVector, HashedNgramEmbedder, Mode, Standardizer, extract_features
from .labeling import (
    LabeledExample,
    TraceProfile,
    dataset_stats,
    filter_dataset,
    grid_sizes,
    label_dataset,
    label_query,
    outlier_count,
    read_labeled_dataset,
    write_labeled_dataset,
)
from .metrics import (
    CalibrationPoint,
    CalibrationResult,
    DominanceReport,
    PolicySummary,
    ace,
    calibrate,
    cost_reduction,
    dominance_check,
    oracle_costs,
    shepherding_cost,
)
from .policy import (
    Decision,
    DecisionVariant,
    Outcome,
    PolicyConfig,
    consensus,
    execute_decision,
    fixed_fraction_policy,
    llm_only_policy,
    map_to_decision,
    oracle_policy,
    run_proactive,
    run_reactive,
    slm_only_policy,
)
from .predictor import Prediction, PredictorConfig, TrainedModel, loss_total
from .reporting import ReportRow, evaluate_strategies, read_outcomes, write_outcomes
from .simulator import (
    CNK12_PROFILE,
    GSM8K_PROFILE,
    PROFILES,
    ExperimentConfig,
    SyntheticQuery,
    build_backends,
    generate_trace,
    run_experiment,
    synth_quality,
)
from .training import train

__version__ = "0.1.0"
