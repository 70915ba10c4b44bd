"""Black-box PAC-model robustness analysis via scenario optimization.

Workflow: sample a clipped L-infinity ball around an input, fit an affine
surrogate of the classifier's score differences by minimax linear
programming, recompute a shared error margin on fresh samples, and decide
robustness from the surrogate's exact worst case over the ball. The
surrogate carries a (significance, error-rate) guarantee from scenario
optimization, and its worst-case corners double as counterexample
candidates.
"""

from .analysis import (
    BaselineResult,
    Candidate,
    ComponentExtreme,
    ContinuousScale,
    Int8Scale,
    RadiusResult,
    RateResult,
    RobustnessReport,
    adversarial_mass_bound,
    baseline_pac_sample_check,
    check_pac_model_robustness,
    extract_and_validate_candidates,
    max_robust_radius,
    maximize_affine_on_ball,
    minimize_affine_on_ball,
    robustness_rate,
    verify_region,
)
from .chebyshev import (
    ChebyshevFitProblem,
    FitResult,
    least_squares_fit,
    residual_margin,
    solve_chebyshev_lp,
    vertex_enumeration_optimum,
)
from .errors import ModelFormatError, OracleProtocolError, PacModelError
from .learner import (
    AffinePacModel,
    Grid,
    LearnerConfig,
    ModelProvenance,
    SplitConfig,
    group_significance,
    initial_partition,
    learn_component,
    learn_pac_model,
    planned_queries,
    refine_partition,
    stepwise_split_learn,
)
from .reporting import canonical_json, emit_report
from .runtime import (
    ClassifierModel,
    DenseLayer,
    ExternalOracle,
    InProcessOracle,
    classify,
    forward,
    load_model,
    score_difference,
    score_difference_batch,
    untargeted_score_difference,
    untargeted_score_difference_batch,
)
from .sampling import (
    NormBallRegion,
    SampleBatch,
    achieved_epsilon,
    derive_seed,
    max_key_features,
    required_samples_full,
    required_samples_margin,
    seed_stream,
    uniform_sample,
)

__version__ = "0.1.0"
