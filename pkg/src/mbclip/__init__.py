"""Adaptive micro-batch clipping under a dragger-gradient noise model:
samplers, clipped and plain SGD, closed-form rates and Monte-Carlo checks."""

from .bounds import (
    ClippedRate,
    HypothesisError,
    RateInputs,
    baseline_sgd_rate,
    bias_sweep,
    clipped_bias,
    clipped_sgd_rate,
    deviation_norm_bound,
    dragger_sgd_rate,
    max_dragger_ratio,
)
from .clipping import (
    ClipMode,
    ClipSpec,
    adaptive_bound,
    aggregate,
    aggregate_adaptive,
    aggregate_fixed,
    aggregate_normalized,
    clip,
    clip_fixed,
    microbatch_mean,
    microbatch_means,
    shard,
)
from .gradient_model import (
    DraggerSpec,
    GradientKind,
    GradientModelParams,
    LabeledGradient,
    calibrated_ratio_schedule,
    make_dragger,
    per_example_variance,
    sample_batch,
    sample_benign,
    sample_per_example,
)
from .linalg import cosine_similarity, dot, l2_norm, project_orthogonal
from .optimizer import (
    DivergenceError,
    IterationRecord,
    RunConfig,
    RunSummary,
    lr_theorem,
    min_grad_norm,
    run_mcsgd,
    run_sgd,
)
from .problems import Problem, finite_diff_grad, logistic_problem, quadratic_problem
from .verification import (
    McReport,
    cosine_experiment,
    halfspace_pair_term,
    mc_deviation_norm,
    mc_halfspace_pair,
    mc_variance_identity,
    norm_ratio_proxy,
)

__version__ = "0.1.0"
