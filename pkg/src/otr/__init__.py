"""otr: compile ReLU/LeakyReLU policy networks into exactly-equivalent oblique
decision trees, prune them with activation traces, and render them as readable
if-then-else programs."""

from .netio import (
    Activation,
    ActivationError,
    DimensionError,
    LayerSpec,
    NetworkError,
    NetworkParseError,
    NetworkShapeError,
    NetworkSpec,
    TaskKind,
    forward,
    forward_with_pattern,
    load_network,
    network_hash,
    save_network,
)
from .tree import (
    ActivationTrace,
    DecisionNode,
    LabelLeaf,
    ObliqueTree,
    Prediction,
    PrunedLeaf,
    PrunedPathError,
    RegressionLeaf,
    TraceMismatchError,
    TreeStats,
    infer,
    load_trace,
    load_tree,
    prune_topk,
    prune_unvisited,
    route,
    save_trace,
    save_tree,
    stats,
)
from .translate import (
    BudgetExceededError,
    TranslateOptions,
    VerificationReport,
    translate,
    verify_equivalence,
)
from .emitter import (
    DominanceReport,
    ProgramSyntaxError,
    ProgramText,
    ZeroOutReport,
    dominance_report,
    emit_pid_program,
    emit_program,
    evaluate_program,
    parse_program,
    zero_out,
)
from .pidpolicy import (
    PidPolicySpec,
    PidState,
    load_policy,
    pid_act,
    pid_features,
    save_policy,
)
from .envs import (
    ENVS,
    MountainCar,
    Pendulum,
    RolloutResult,
    UnknownEnvError,
    collect_trace,
    env_step,
    episode_rng,
    rollout,
)

__version__ = "0.1.0"
