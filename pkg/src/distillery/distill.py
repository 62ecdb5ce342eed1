"""Offline actor distillation: replay collection, KL loss, fine-tuning.

A trained teacher walks the environment once, recording every observation
together with its full action-probability vector. Students of any capacity
are then trained purely from that replay buffer by minimizing the KL
divergence from the teacher's distribution to theirs; no environment steps
are taken during distillation. Optionally the teacher targets can be
sharpened with a small temperature before the KL, reproducing the low
temperature regime used for value-function distillation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .envs import EnvSpec
from .errors import ConfigError, DomainError, NumericError
from .evaluation import EvalReport, evaluate
from .nets import (
    ActorCriticNet,
    AdamState,
    CapacityTier,
    adam_step,
    backward,
    build_network,
    forward,
    reinitialize_value_head,
    softmax,
)
from .ppo import PPOConfig, train

PROBABILITY_SUM_TOL = 1e-6


@dataclass
class ReplayBuffer:
    """Recorded (observation, teacher probabilities, sampled action) dataset."""

    observations: np.ndarray  # [n, obs_dim]
    probabilities: np.ndarray  # [n, action_count]
    actions: np.ndarray  # [n] int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        n = self.observations.shape[0]
        if n == 0:
            raise ConfigError("replay buffer must not be empty")
        if self.probabilities.shape[0] != n or self.actions.shape[0] != n:
            raise ConfigError("replay buffer arrays disagree on record count")
        if self.probabilities.ndim != 2 or self.probabilities.shape[1] < 2:
            raise ConfigError("teacher probabilities need at least two actions")
        sums = self.probabilities.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROBABILITY_SUM_TOL) or np.any(
            self.probabilities < 0.0
        ):
            raise ConfigError("teacher probabilities must be non-negative and sum to 1")
        if np.any(self.actions < 0) or np.any(self.actions >= self.action_count):
            raise ConfigError("sampled actions out of range")

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def action_count(self) -> int:
        return self.probabilities.shape[1]

    def __len__(self) -> int:
        return self.observations.shape[0]

    def env_spec(self) -> EnvSpec:
        if "env" not in self.metadata:
            raise ConfigError("replay buffer metadata carries no environment spec")
        return EnvSpec.from_dict(self.metadata["env"])


@dataclass
class DistillConfig:
    epochs: int
    minibatch_size: int = 32
    stepsize: float = 3e-4
    temperature: float = 1.0  # 1 leaves targets untouched; 0.01 sharpens hard
    floor: float = 1e-8  # lower clamp on student probabilities inside the log

    def validate(self) -> "DistillConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be positive")
        if self.stepsize <= 0.0:
            raise ConfigError("stepsize must be positive")
        if self.temperature <= 0.0:
            raise DomainError("temperature must be positive")
        if not 0.0 < self.floor < 1.0:
            raise ConfigError("probability floor must lie in (0, 1)")
        return self


def collect_replay(
    teacher: ActorCriticNet,
    env,
    n_records: int,
    seed: int,
    teacher_id: str = "",
    created: str | None = None,
) -> ReplayBuffer:
    """Let the teacher act in the environment, recording every step.

    The teacher samples from its own softmax distribution; episodes reset
    automatically. Exactly n_records records come back. `created` is an
    optional timestamp string; it defaults to None so that identical seeds
    produce byte-identical buffers on disk.
    """
    if n_records < 1:
        raise ConfigError("n_records must be >= 1")
    if teacher.obs_dim != env.obs_dim or teacher.action_count != env.action_count:
        raise ConfigError(
            f"teacher shape ({teacher.obs_dim}, {teacher.action_count}) does not "
            f"match environment ({env.obs_dim}, {env.action_count})"
        )
    rng = streams.generator(seed, streams.COLLECTION)
    observations = np.zeros((n_records, env.obs_dim))
    probabilities = np.zeros((n_records, env.action_count))
    actions = np.zeros(n_records, dtype=np.int64)

    obs = env.reset()
    for k in range(n_records):
        logits, _, _ = forward(teacher, obs[None, :])
        probs = softmax(logits[0])
        u = rng.random()
        action = min(int(np.searchsorted(np.cumsum(probs), u, side="right")),
                     env.action_count - 1)
        observations[k] = obs
        probabilities[k] = probs
        actions[k] = action
        result = env.step(action)
        obs = env.reset() if result.done else result.observation

    metadata = {
        "teacher_id": teacher_id,
        "env": env.spec.to_dict(),
        "seed": int(seed),
        "created": created,
    }
    return ReplayBuffer(observations, probabilities, actions, int(seed), metadata)


def kl_loss(
    teacher_probs: np.ndarray, student_logits: np.ndarray, floor: float = 1e-8
) -> float:
    """Batch-mean KL divergence from teacher distribution to student policy.

    Student probabilities are softmax(logits) clamped below at `floor` and
    renormalized; teacher entries of exactly 0 contribute 0.
    """
    t = np.asarray(teacher_probs, dtype=np.float64)
    z = np.asarray(student_logits, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if z.ndim == 1:
        z = z[None, :]
    if t.shape != z.shape:
        raise ConfigError(f"teacher {t.shape} and student {z.shape} shapes differ")
    sums = t.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROBABILITY_SUM_TOL):
        raise ConfigError("teacher rows must sum to 1")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite student logits in kl_loss")
    p = softmax(z)
    p = np.maximum(p, floor)
    p /= p.sum(axis=1, keepdims=True)
    terms = np.where(t > 0.0, t * (np.log(np.maximum(t, 1e-300)) - np.log(p)), 0.0)
    return float(terms.sum(axis=1).mean())


def kl_loss_grad(teacher_probs: np.ndarray, student_logits: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean KL w.r.t. the student logits.

    Per sample this is softmax(logits) - teacher, scaled by 1/batch; each
    row sums to zero.
    """
    t = np.asarray(teacher_probs, dtype=np.float64)
    z = np.asarray(student_logits, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if z.ndim == 1:
        z = z[None, :]
    if t.shape != z.shape:
        raise ConfigError(f"teacher {t.shape} and student {z.shape} shapes differ")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite student logits in kl_loss_grad")
    return (softmax(z) - t) / t.shape[0]


def sharpen_distribution(values: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(values / temperature); as temperature -> 0 this approaches a
    one-hot vector at the argmax."""
    return softmax(values, temperature=temperature)


def _sharpen_targets(probabilities: np.ndarray, temperature: float) -> np.ndarray:
    # Stored targets are probabilities; sharpening their logs is equivalent
    # to sharpening the original logits (the shared constant cancels).
    return sharpen_distribution(np.log(np.maximum(probabilities, 1e-300)), temperature)


def distill(
    student: ActorCriticNet,
    buffer: ReplayBuffer,
    config: DistillConfig,
    seed: int,
):
    """Train the student's actor to match the recorded teacher distribution.

    Minibatch Adam on the KL loss over seeded reshuffles of the buffer; the
    value head receives zero gradient and is untouched. Returns the student
    and the per-epoch mean KL (measured before each step).
    """
    config.validate()
    if student.obs_dim != buffer.obs_dim or student.action_count != buffer.action_count:
        raise ConfigError(
            f"student shape ({student.obs_dim}, {student.action_count}) does not "
            f"match buffer ({buffer.obs_dim}, {buffer.action_count})"
        )
    targets = buffer.probabilities
    if config.temperature != 1.0:
        targets = _sharpen_targets(targets, config.temperature)

    rng = streams.generator(seed, streams.DISTILL_SHUFFLE)
    params = student.parameters()
    adam = AdamState.for_parameters(params)
    n = len(buffer)
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            logits, _, cache = forward(student, buffer.observations[idx])
            loss_sum += kl_loss(targets[idx], logits, config.floor) * len(idx)
            dlogits = kl_loss_grad(targets[idx], logits)
            grads = backward(student, cache, dlogits, np.zeros(len(idx)))
            adam_step(params, grads, adam, config.stepsize)
        epoch_losses.append(loss_sum / n)
    return student, epoch_losses


def finetune(
    student: ActorCriticNet,
    env_spec: EnvSpec,
    ppo_config: PPOConfig,
    seed: int,
):
    """Continue training a distilled student in the environment with PPO.

    Distillation only transfers the actor, so the critic head is freshly
    initialized before training. A zero-step budget returns the student
    unchanged. Returns (tuned policy, learning curve).
    """
    if ppo_config.total_env_steps == 0:
        return student, []
    tuned = student.copy()
    reinitialize_value_head(tuned, streams.generator(seed, streams.VALUE_INIT))
    return train(env_spec, None, ppo_config, seed, policy=tuned)


@dataclass
class SweepRow:
    tier: str
    epochs: int
    report: EvalReport


def epoch_sweep(
    tiers: list[CapacityTier],
    epoch_list: list[int],
    buffer: ReplayBuffer,
    eval_steps: int,
    seed: int,
    config: DistillConfig | None = None,
) -> list[SweepRow]:
    """Distill a fresh student per (tier, epochs) pair and evaluate it.

    The evaluation environment comes from the buffer's metadata. Rows come
    back in input order: tiers outer, epochs inner.
    """
    if not epoch_list:
        raise ConfigError("epoch list must not be empty")
    base = config or DistillConfig(epochs=1)
    env_spec = buffer.env_spec()
    rows: list[SweepRow] = []
    row_index = 0
    for tier in tiers:
        for epochs in epoch_list:
            student = build_network(
                buffer.obs_dim,
                buffer.action_count,
                tier.hidden_widths,
                streams.generator(seed, streams.INIT, row_index),
            )
            row_config = DistillConfig(
                epochs=epochs,
                minibatch_size=base.minibatch_size,
                stepsize=base.stepsize,
                temperature=base.temperature,
                floor=base.floor,
            )
            student, _ = distill(student, buffer, row_config, seed)
            report = evaluate(student, env_spec, eval_steps, seed)
            rows.append(SweepRow(tier.tag, epochs, report))
            row_index += 1
    return rows
