"""Teacher-student policy distillation for PPO on desk-scale environments.

The pipeline has three phases: train a high-capacity teacher with PPO,
record its observations and action probabilities into a replay buffer, and
distill that buffer into lower-capacity students by minimizing the KL
divergence from the teacher's action distribution. Students can optionally
be fine-tuned in the environment afterwards.
"""

from .distill import (
    DistillConfig,
    ReplayBuffer,
    collect_replay,
    distill,
    epoch_sweep,
    finetune,
    kl_loss,
    kl_loss_grad,
    sharpen_distribution,
)
from .envs import (
    CartPoleLite,
    ChainMDP,
    EnvSpec,
    GreedyTabularPolicy,
    GridWorld,
    StepResult,
    action_value_table,
    build_env,
    make_env,
    optimal_return,
)
from .errors import (
    ConfigError,
    DistilleryError,
    DomainError,
    FormatError,
    NumericError,
    UsageError,
)
from .evaluation import (
    ComparisonReport,
    EvalReport,
    ScoreCell,
    comparison_report,
    evaluate,
    geometric_mean_ratio,
)
from .nets import (
    ActorCriticNet,
    AdamState,
    CapacityTier,
    DenseLayer,
    adam_step,
    backward,
    build_network,
    count_parameters,
    forward,
    log_softmax,
    parameter_count,
    softmax,
)
from .persistence import (
    load_checkpoint,
    load_policy,
    load_replay,
    policy_digest,
    save_checkpoint,
    save_replay,
)
from .ppo import (
    CurvePoint,
    PPOConfig,
    RolloutBuffer,
    collect_rollout,
    compute_gae,
    make_actors,
    normalize_advantages,
    ppo_loss_and_grads,
    ppo_update,
    train,
)

__version__ = "0.1.0"
