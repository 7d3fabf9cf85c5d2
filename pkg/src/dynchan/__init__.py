"""Dynamic multichannel access: correlated channel models, belief-state
solvers, index and clairvoyant baselines, and a from-scratch DQN."""

from .adaptive import AdaptiveConfig, AdaptiveResult, adaptive_dqn_run
from .agents import (
    DQNAgent,
    History,
    PRESETS,
    ReplayBuffer,
    TabularQAgent,
    TrainConfig,
    TrainResult,
    build_agent,
    encode_slot,
    load_checkpoint,
    save_checkpoint,
    train_dqn,
    train_tabular,
)
from .beliefs import (
    FiniteHorizonSolver,
    FixedPatternQTable,
    bellman_backup,
    belief_step,
    channel_marginals,
    discounted_return,
    exact_finite_horizon_solve,
    fixed_pattern_q,
    marginal_channel_chain,
    observation_update,
    transition_update,
    truncation_error_bound,
    uniform_belief,
)
from .config import build_env_spec, build_model, config_hash, load_config, parse_config_text
from .env import ChannelEnv, EnvSpec, multi_user_step
from .errors import (
    CapacityError,
    ConfigError,
    DivergenceError,
    ImpossibleObservation,
    NumericError,
    TraceExhausted,
    TraceFormatError,
)
from .evaluation import (
    AgentPolicy,
    EvaluationReport,
    combo_actions,
    evaluate_multi_user,
    evaluate_policy,
)
from .experiments import make_bursty_trace, make_policy, run_experiment
from .models import (
    CorrelatedChannelModel,
    FixedPatternModel,
    JointMarkovModel,
    NonstationaryModel,
    PhaseCycleModel,
    TraceModel,
    build_fixed_pattern,
    build_joint_from_marginals,
    even_partition,
    expand_to_joint,
    load_trace,
    save_trace,
    stationary_distribution,
)
from .policies import (
    GenieFixedPatternPolicy,
    GilbertElliotChain,
    MyopicPolicy,
    RandomPolicy,
    WhittleIndexPolicy,
    mle_estimate_chain,
    myopic_action,
    whittle_index,
)
from .seeding import spawn_rng

__version__ = "0.1.0"
