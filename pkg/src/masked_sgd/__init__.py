"""SGD variants with masked updates and perturbed gradient evaluation."""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateGradientError,
    DegenerateMaskError,
    NumericError,
    TrainingAborted,
)
from .graphs import (
    CompGraph,
    Node,
    ParamLayout,
    finite_diff_gradient,
    forward,
    gradient,
    max_rel_err,
    value_and_grad,
)
from .masks import (
    AllOnes,
    Alternating,
    BernoulliDropout,
    DisjointPartition,
    FixedMask,
    Mask,
    MaskStrategy,
    TopK,
    mask_overlap_ratio,
    merge_disjoint,
    next_mask,
    partition_disjoint,
)
from .metrics import GradientRatios, descent_bound, gradient_ratios, iteration_bound, trace_series
from .models import (
    CompositeSpec,
    LowRankSpec,
    build_low_rank_mlp,
    build_mlp,
    build_two_branch,
    collapse_low_rank,
    collapse_network,
    core_mask,
    extract_low_rank_core,
    extract_slim_core,
    low_rank_forward,
    slim_width_mask,
    slim_widths,
)
from .optim import (
    TrainConfig,
    alignment_factor,
    run_alternating,
    run_masked_sgd,
    sgd_step,
    step_scale,
    theoretical_stepsize,
)
from .perturb import (
    ALIGN_RATIO_BOUND,
    SIM_RATIO_BOUND,
    Extragradient,
    NoPerturbation,
    PerturbationStrategy,
    ZeroComplement,
    check_perturbation_bound,
    perturb,
    perturbation_ratio,
)
from .problems import (
    Dataset,
    ModelProblem,
    NoiseModel,
    QuadraticProblem,
    make_blobs,
    make_quadratic,
    stochastic_gradient,
)
from .trace import StepTrace, Trajectory, read_jsonl, write_series_csv

__version__ = "0.1.0"
