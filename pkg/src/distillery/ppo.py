"""On-policy PPO: parallel rollouts, GAE, clipped-surrogate updates.

Used both for teacher training and for fine-tuning distilled students. The
update is the standard clipped surrogate with an unclipped squared value
loss and an entropy bonus; gradients are exact analytic expressions pushed
through the dense substrate in :mod:`distillery.nets`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .envs import EnvSpec, make_env
from .errors import ConfigError, DistilleryError, NumericError
from .nets import (
    ActorCriticNet,
    AdamState,
    CapacityTier,
    adam_step,
    backward,
    build_network,
    forward,
    log_softmax,
    softmax,
)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95  # GAE decay; the usual lambda
    clip: float = 0.1
    update_epochs: int = 10
    minibatch_size: int = 32
    num_actors: int = 16
    horizon: int = 128
    stepsize: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    total_env_steps: int = 204_800

    def validate(self) -> "PPOConfig":
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.clip <= 0.0:
            raise ConfigError("clip must be positive")
        if self.update_epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("update_epochs and minibatch_size must be positive")
        if self.num_actors < 1 or self.horizon < 1:
            raise ConfigError("num_actors and horizon must be positive")
        if (self.num_actors * self.horizon) % self.minibatch_size != 0:
            raise ConfigError(
                f"num_actors*horizon = {self.num_actors * self.horizon} must be "
                f"divisible by minibatch_size = {self.minibatch_size}"
            )
        if self.stepsize <= 0.0:
            raise ConfigError("stepsize must be positive")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be non-negative")
        return self


@dataclass
class RolloutBuffer:
    """Fixed-horizon on-policy batch, one row per (actor, time)."""

    observations: np.ndarray  # [N, T, obs_dim]
    actions: np.ndarray  # [N, T] int
    log_probs: np.ndarray  # [N, T], log prob of the sampled action
    rewards: np.ndarray  # [N, T]
    dones: np.ndarray  # [N, T] bool
    values: np.ndarray  # [N, T]
    bootstrap_values: np.ndarray  # [N], V of the state after the last step

    def __post_init__(self):
        n, t = self.actions.shape
        expected = {
            "observations": (n, t, self.observations.shape[2]),
            "log_probs": (n, t),
            "rewards": (n, t),
            "dones": (n, t),
            "values": (n, t),
            "bootstrap_values": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"rollout field {name} has shape "
                                  f"{getattr(self, name).shape}, expected {shape}")
        if np.any(self.log_probs > 1e-12):
            raise ConfigError("log probabilities must be <= 0")

    @property
    def num_actors(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


@dataclass
class ActorState:
    """One environment plus its sampling stream and episode bookkeeping."""

    env: object
    action_rng: np.random.Generator
    obs: np.ndarray | None = None
    episode_return: float = 0.0


def make_actors(spec: EnvSpec, num_actors: int, seed: int) -> list[ActorState]:
    return [
        ActorState(make_env(spec, seed, i), streams.generator(seed, streams.ROLLOUT, i))
        for i in range(num_actors)
    ]


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; deterministic given the stream state."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def collect_rollout(policy: ActorCriticNet, actors: list[ActorState], horizon: int):
    """Roll every actor forward `horizon` steps, auto-resetting on done.

    Returns (buffer, completed_returns): the on-policy batch plus the
    undiscounted returns of episodes that finished inside this window.
    Actors keep their in-progress episodes for the next call.
    """
    n = len(actors)
    obs_dim = policy.obs_dim
    observations = np.zeros((n, horizon, obs_dim))
    actions = np.zeros((n, horizon), dtype=np.int64)
    log_probs = np.zeros((n, horizon))
    rewards = np.zeros((n, horizon))
    dones = np.zeros((n, horizon), dtype=bool)
    values = np.zeros((n, horizon))
    completed: list[float] = []

    for actor in actors:
        if actor.obs is None:
            actor.obs = actor.env.reset()
            actor.episode_return = 0.0

    for t in range(horizon):
        obs_batch = np.stack([actor.obs for actor in actors])
        logits, batch_values, _ = forward(policy, obs_batch)
        probs = softmax(logits)
        logp = log_softmax(logits)
        for i, actor in enumerate(actors):
            a = sample_action(probs[i], actor.action_rng)
            try:
                result = actor.env.step(a)
            except DistilleryError as err:
                raise type(err)(f"actor {i}: {err}") from err
            observations[i, t] = actor.obs
            actions[i, t] = a
            log_probs[i, t] = logp[i, a]
            rewards[i, t] = result.reward
            dones[i, t] = result.done
            values[i, t] = batch_values[i]
            actor.episode_return += result.reward
            if result.done:
                completed.append(actor.episode_return)
                actor.obs = actor.env.reset()
                actor.episode_return = 0.0
            else:
                actor.obs = result.observation

    final_obs = np.stack([actor.obs for actor in actors])
    _, bootstrap, _ = forward(policy, final_obs)
    buffer = RolloutBuffer(
        observations, actions, log_probs, rewards, dones, values, bootstrap
    )
    return buffer, completed


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """Generalized advantage estimates and value targets.

    delta_t = r_t + gamma*V(s_{t+1})*(1 - done_t) - V(s_t), accumulated
    backwards as A_t = delta_t + gamma*lam*(1 - done_t)*A_{t+1}; the stored
    bootstrap value stands in for V at the horizon. returns = A + V.
    """
    n, t = buffer.rewards.shape
    mask = 1.0 - buffer.dones.astype(np.float64)
    next_values = np.concatenate(
        [buffer.values[:, 1:], buffer.bootstrap_values[:, None]], axis=1
    )
    deltas = buffer.rewards + gamma * next_values * mask - buffer.values
    advantages = np.zeros((n, t))
    running = np.zeros(n)
    for step in range(t - 1, -1, -1):
        running = deltas[:, step] + gamma * lam * mask[:, step] * running
        advantages[:, step] = running
    return advantages, advantages + buffer.values


def normalize_advantages(advantages: np.ndarray, std_floor: float = 1e-8) -> np.ndarray:
    centered = advantages - advantages.mean()
    return centered / max(float(advantages.std()), std_floor)


def ppo_loss_and_grads(
    net: ActorCriticNet,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: PPOConfig,
):
    """Total clipped-surrogate loss and its exact parameter gradients.

    Loss = -mean(min(ratio*A, clip(ratio)*A))
           + value_coef * mean((V - return)^2)
           - entropy_coef * mean(entropy).
    Returns (stats dict, gradient list aligned with net.parameters()).
    """
    b = obs.shape[0]
    logits, values, cache = forward(net, obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(b)
    logp_taken = logp_all[rows, actions]
    ratio = np.exp(logp_taken - old_log_probs)

    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * advantages
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -float(surrogate.mean())

    value_error = values - returns
    value_loss = float(np.mean(value_error**2))

    plogp = np.where(probs > 0.0, probs * logp_all, 0.0)
    entropy = -plogp.sum(axis=1)
    mean_entropy = float(entropy.mean())

    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * mean_entropy
    if not np.isfinite(total):
        raise NumericError("non-finite PPO loss; update aborted")

    # d policy_loss / d logits: gradient flows only through the active
    # (unclipped) branch of the min.
    active = (unclipped <= clipped).astype(np.float64)
    one_hot = np.zeros_like(probs)
    one_hot[rows, actions] = 1.0
    dsurr = (active * advantages * ratio)[:, None] * (one_hot - probs)
    dlogits = -dsurr / b
    # entropy bonus: d(-c*mean(H))/dz = c/b * p*(log p + H)
    dlogits += (config.entropy_coef / b) * probs * (logp_all + entropy[:, None])
    dvalues = (2.0 * config.value_coef / b) * value_error

    grads = backward(net, cache, dlogits, dvalues)
    stats = {
        "total_loss": total,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": mean_entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip)),
    }
    return stats, grads


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def ppo_update(
    net: ActorCriticNet,
    adam: AdamState,
    buffer: RolloutBuffer,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: PPOConfig,
    shuffle_rng: np.random.Generator,
) -> UpdateStats:
    """Run update_epochs shuffled minibatch passes over the rollout."""
    n_samples = buffer.num_actors * buffer.horizon
    obs = buffer.observations.reshape(n_samples, -1)
    actions = buffer.actions.reshape(n_samples)
    old_logp = buffer.log_probs.reshape(n_samples)
    adv = normalize_advantages(advantages.reshape(n_samples))
    ret = returns.reshape(n_samples)

    params = net.parameters()
    totals = np.zeros(4)
    batches = 0
    for _ in range(config.update_epochs):
        order = shuffle_rng.permutation(n_samples)
        for start in range(0, n_samples, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            stats, grads = ppo_loss_and_grads(
                net, obs[idx], actions[idx], old_logp[idx], adv[idx], ret[idx], config
            )
            adam_step(params, grads, adam, config.stepsize)
            totals += (
                stats["policy_loss"],
                stats["value_loss"],
                stats["entropy"],
                stats["clip_fraction"],
            )
            batches += 1
    means = totals / batches
    return UpdateStats(*means)


@dataclass
class CurvePoint:
    """One learning-curve sample, taken after each PPO update."""

    env_steps: int
    mean_return: float
    std_return: float
    episodes: int


def train(
    env_spec: EnvSpec,
    tier: CapacityTier | None,
    config: PPOConfig,
    seed: int,
    policy: ActorCriticNet | None = None,
):
    """Full PPO loop: collect, estimate advantages, update, repeat.

    Runs until total_env_steps environment steps have been taken, sampling
    one learning-curve point per update. Pass `policy` to continue training
    an existing network (fine-tuning); otherwise a fresh one is built from
    the capacity tier. Fully deterministic given the seed.
    """
    config.validate()
    if policy is None:
        if tier is None:
            raise ConfigError("train needs either a capacity tier or a policy")
        policy = build_network(
            env_spec.obs_dim,
            env_spec.action_count,
            tier.hidden_widths,
            streams.generator(seed, streams.INIT),
        )
    if policy.obs_dim != env_spec.obs_dim or policy.action_count != env_spec.action_count:
        raise ConfigError(
            f"policy shape ({policy.obs_dim}, {policy.action_count}) does not match "
            f"environment ({env_spec.obs_dim}, {env_spec.action_count})"
        )

    actors = make_actors(env_spec, config.num_actors, seed)
    shuffle_rng = streams.generator(seed, streams.UPDATE)
    adam = AdamState.for_parameters(policy.parameters())
    curve: list[CurvePoint] = []
    steps_done = 0
    last_mean = float("nan")
    last_std = float("nan")
    while steps_done < config.total_env_steps:
        buffer, completed = collect_rollout(policy, actors, config.horizon)
        advantages, returns = compute_gae(buffer, config.gamma, config.lam)
        ppo_update(policy, adam, buffer, advantages, returns, config, shuffle_rng)
        steps_done += config.num_actors * config.horizon
        if completed:
            last_mean = float(np.mean(completed))
            last_std = float(np.std(completed))
        curve.append(CurvePoint(steps_done, last_mean, last_std, len(completed)))
    return policy, curve
