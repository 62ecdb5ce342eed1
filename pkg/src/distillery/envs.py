"""Desk-scale environments with discrete actions, plus a tabular oracle.

Three environments are built in:

* ``chain``: states 0..N-1 on a line, start at 0, move left/right with a
  slip probability that inverts the chosen action; reaching N-1 pays +1 and
  ends the episode. Every step also costs 0.01. Cap: 4N steps.
* ``grid``: an LxL room, start (0, 0), goal (L-1, L-1), deterministic
  up/down/left/right moves, off-grid moves are no-ops; goal pays +1, every
  step costs 0.01. Cap: 4L^2 steps.
* ``cartpole_lite``: the classic cart-pole balancing task under explicit
  Euler integration, +1 per step, ends when the pole or cart leaves its
  bounds or after 500 steps.

``optimal_return`` runs value iteration on the tabular environments and is
the ground-truth yardstick used by the acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericError, UsageError
from .rng import env_generator

ENV_IDS = ("chain", "grid", "cartpole_lite")

# Module-wide count of environment steps ever taken; lets tests assert that
# offline phases (distillation, reporting) never touch an environment.
_GLOBAL_STEPS = 0


def global_step_count() -> int:
    return _GLOBAL_STEPS


@dataclass(frozen=True)
class EnvSpec:
    """Environment id plus parameters; only fields relevant to id are used."""

    id: str
    n: int = 10  # chain: number of states
    slip: float = 0.1  # chain: probability the action is inverted
    size: int = 5  # grid: side length
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force: float = 10.0
    dt: float = 0.02
    step_cap: int | None = None  # None selects the per-environment default

    def __post_init__(self):
        if self.id not in ENV_IDS:
            raise ConfigError(f"unknown environment id {self.id!r}")
        if self.id == "chain":
            if self.n < 3:
                raise ConfigError("chain needs at least 3 states")
            if not 0.0 <= self.slip < 1.0:
                raise ConfigError("chain slip must lie in [0, 1)")
        elif self.id == "grid":
            if self.size < 2:
                raise ConfigError("grid side length must be at least 2")
        else:
            for name in ("gravity", "cart_mass", "pole_mass", "half_length", "force", "dt"):
                if getattr(self, name) <= 0:
                    raise ConfigError(f"cartpole constant {name} must be positive")
        if self.step_cap is not None and self.step_cap < 1:
            raise ConfigError("step cap must be positive")

    @property
    def obs_dim(self) -> int:
        if self.id == "chain":
            return self.n
        if self.id == "grid":
            return self.size * self.size
        return 4

    @property
    def action_count(self) -> int:
        return 4 if self.id == "grid" else 2

    @property
    def max_episode_steps(self) -> int:
        if self.step_cap is not None:
            return self.step_cap
        if self.id == "chain":
            return 4 * self.n
        if self.id == "grid":
            return 4 * self.size * self.size
        return 500

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "step_cap": self.step_cap}
        if self.id == "chain":
            d.update(n=self.n, slip=self.slip)
        elif self.id == "grid":
            d.update(size=self.size)
        else:
            d.update(
                gravity=self.gravity,
                cart_mass=self.cart_mass,
                pole_mass=self.pole_mass,
                half_length=self.half_length,
                force=self.force,
                dt=self.dt,
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        known = {
            "id", "n", "slip", "size", "gravity", "cart_mass", "pole_mass",
            "half_length", "force", "dt", "step_cap",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown environment fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


class _BaseEnv:
    """Shared bookkeeping: step cap, done latch, lifetime step counter."""

    def __init__(self, spec: EnvSpec, rng: np.random.Generator | None):
        self.spec = spec
        self.rng = rng
        self.obs_dim = spec.obs_dim
        self.action_count = spec.action_count
        self._episode_steps = 0
        self._done = True  # must reset before stepping
        self.lifetime_steps = 0

    def reset(self) -> np.ndarray:
        self._episode_steps = 0
        self._done = False
        return self._reset_state()

    def step(self, action: int) -> StepResult:
        global _GLOBAL_STEPS
        if self._done:
            raise UsageError("step called on a finished episode; reset first")
        action = int(action)
        if not 0 <= action < self.action_count:
            raise DomainError(
                f"action {action} outside [0, {self.action_count}) for {self.spec.id}"
            )
        obs, reward, terminal = self._transition(action)
        self._episode_steps += 1
        self.lifetime_steps += 1
        _GLOBAL_STEPS += 1
        done = terminal or self._episode_steps >= self.spec.max_episode_steps
        self._done = done
        return StepResult(obs, reward, done)

    # subclass hooks
    def _reset_state(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, action: int):
        raise NotImplementedError


class ChainMDP(_BaseEnv):
    """Line of states with slip noise; observation is the one-hot state."""

    def __init__(self, spec: EnvSpec, rng: np.random.Generator | None = None):
        super().__init__(spec, rng)
        self._state = 0

    def _one_hot(self) -> np.ndarray:
        obs = np.zeros(self.spec.n)
        obs[self._state] = 1.0
        return obs

    def _reset_state(self) -> np.ndarray:
        self._state = 0
        return self._one_hot()

    def _transition(self, action: int):
        move_right = action == 1
        if self.spec.slip > 0.0:
            if self.rng is None:
                raise ConfigError("chain with slip > 0 needs an RNG stream")
            if self.rng.random() < self.spec.slip:
                move_right = not move_right
        if move_right:
            self._state += 1
        else:
            self._state = max(self._state - 1, 0)
        terminal = self._state == self.spec.n - 1
        reward = -0.01 + (1.0 if terminal else 0.0)
        return self._one_hot(), reward, terminal


class GridWorld(_BaseEnv):
    """Deterministic LxL room; observation is the one-hot cell x + L*y."""

    # action -> (dx, dy): up, down, left, right
    MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))

    def __init__(self, spec: EnvSpec, rng: np.random.Generator | None = None):
        super().__init__(spec, rng)
        self._x = 0
        self._y = 0

    def _one_hot(self) -> np.ndarray:
        obs = np.zeros(self.spec.size * self.spec.size)
        obs[self._x + self.spec.size * self._y] = 1.0
        return obs

    def _reset_state(self) -> np.ndarray:
        self._x = 0
        self._y = 0
        return self._one_hot()

    def _transition(self, action: int):
        size = self.spec.size
        dx, dy = self.MOVES[action]
        nx, ny = self._x + dx, self._y + dy
        if 0 <= nx < size and 0 <= ny < size:
            self._x, self._y = nx, ny
        terminal = self._x == size - 1 and self._y == size - 1
        reward = -0.01 + (1.0 if terminal else 0.0)
        return self._one_hot(), reward, terminal


class CartPoleLite(_BaseEnv):
    """Cart-pole balancing with explicit Euler integration, +1 per step."""

    THETA_LIMIT = 12.0 * math.pi / 180.0
    X_LIMIT = 2.4

    def __init__(self, spec: EnvSpec, rng: np.random.Generator | None = None):
        super().__init__(spec, rng)
        self._state = np.zeros(4)

    def _reset_state(self) -> np.ndarray:
        if self.rng is None:
            raise ConfigError("cartpole_lite needs an RNG stream for reset")
        self._state = self.rng.uniform(-0.05, 0.05, size=4)
        return self._state.copy()

    def _transition(self, action: int):
        s = self.spec
        x, x_dot, theta, theta_dot = self._state
        force = s.force if action == 1 else -s.force
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        total_mass = s.cart_mass + s.pole_mass
        polemass_length = s.pole_mass * s.half_length
        temp = (force + polemass_length * theta_dot**2 * sin_t) / total_mass
        theta_acc = (s.gravity * sin_t - cos_t * temp) / (
            s.half_length * (4.0 / 3.0 - s.pole_mass * cos_t**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
        x = x + s.dt * x_dot
        x_dot = x_dot + s.dt * x_acc
        theta = theta + s.dt * theta_dot
        theta_dot = theta_dot + s.dt * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        if not np.all(np.isfinite(self._state)):
            raise NumericError("cartpole state became non-finite")
        terminal = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return self._state.copy(), 1.0, terminal


_ENV_CLASSES = {"chain": ChainMDP, "grid": GridWorld, "cartpole_lite": CartPoleLite}


def build_env(spec: EnvSpec, rng: np.random.Generator | None) -> _BaseEnv:
    """Environment instance using the caller-supplied stream."""
    return _ENV_CLASSES[spec.id](spec, rng)


def make_env(spec: EnvSpec, seed: int = 0, index: int = 0) -> _BaseEnv:
    """Environment instance owning the Philox stream keyed (seed, index)."""
    return build_env(spec, env_generator(seed, index))


# --- tabular oracle -------------------------------------------------------


def _tabular_model(spec: EnvSpec):
    """(n_states, start, transitions) where transitions[s][a] is a list of
    (prob, next_state, reward, next_is_terminal)."""
    if spec.id == "chain":
        n = spec.n
        transitions = []
        for s in range(n - 1):
            per_action = []
            for a in (0, 1):
                p_right = 1.0 - spec.slip if a == 1 else spec.slip
                outs = []
                if p_right > 0.0:
                    s2 = s + 1
                    outs.append((p_right, s2, -0.01 + (1.0 if s2 == n - 1 else 0.0), s2 == n - 1))
                if p_right < 1.0:
                    outs.append((1.0 - p_right, max(s - 1, 0), -0.01, False))
                per_action.append(outs)
            transitions.append(per_action)
        transitions.append([[(1.0, n - 1, 0.0, True)] for _ in range(2)])  # absorbing
        return n, 0, transitions
    if spec.id == "grid":
        size = spec.size
        n = size * size
        goal = n - 1
        transitions = []
        for s in range(n):
            x, y = s % size, s // size
            per_action = []
            for dx, dy in GridWorld.MOVES:
                if s == goal:
                    per_action.append([(1.0, goal, 0.0, True)])
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < size and 0 <= ny < size):
                    nx, ny = x, y
                s2 = nx + size * ny
                per_action.append([(1.0, s2, -0.01 + (1.0 if s2 == goal else 0.0), s2 == goal)])
            transitions.append(per_action)
        return n, 0, transitions
    raise DomainError(f"no tabular model for environment {spec.id!r}")


def action_value_table(
    spec: EnvSpec, gamma: float, residual: float = 1e-10, max_iter: int = 1_000_000
) -> np.ndarray:
    """Optimal Q-table [states, actions] by value iteration.

    The episode step cap is a rollout bound, not part of the MDP; the oracle
    solves the uncapped problem.
    """
    if spec.id not in ("chain", "grid"):
        raise DomainError("optimal values are only defined for tabular environments")
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    n, _, transitions = _tabular_model(spec)
    n_actions = len(transitions[0])
    values = np.zeros(n)
    for _ in range(max_iter):
        new_values = np.zeros(n)
        for s in range(n):
            best = -np.inf
            for a in range(n_actions):
                q = 0.0
                for prob, s2, reward, terminal in transitions[s][a]:
                    q += prob * (reward + (0.0 if terminal else gamma * values[s2]))
                best = max(best, q)
            new_values[s] = best
        delta = float(np.max(np.abs(new_values - values)))
        values = new_values
        if delta < residual:
            break
    else:
        raise NumericError("value iteration did not reach the residual target")
    q_table = np.zeros((n, n_actions))
    for s in range(n):
        for a in range(n_actions):
            q = 0.0
            for prob, s2, reward, terminal in transitions[s][a]:
                q += prob * (reward + (0.0 if terminal else gamma * values[s2]))
            q_table[s, a] = q
    return q_table


def optimal_return(spec: EnvSpec, gamma: float) -> float:
    """Expected discounted return of the optimal policy from the start state."""
    q_table = action_value_table(spec, gamma)
    _, start, _ = _tabular_model(spec)
    return float(np.max(q_table[start]))


class GreedyTabularPolicy:
    """Acts greedily on the value-iteration Q-table; one-hot observations."""

    def __init__(self, spec: EnvSpec, gamma: float):
        self.q_table = action_value_table(spec, gamma)
        self.action_count = spec.action_count

    def action_probabilities(self, obs_batch: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs_batch)
        states = np.argmax(obs, axis=1)
        probs = np.zeros((obs.shape[0], self.action_count))
        probs[np.arange(obs.shape[0]), np.argmax(self.q_table[states], axis=1)] = 1.0
        return probs
