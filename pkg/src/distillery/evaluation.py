"""Policy evaluation and score reporting.

Evaluation runs whole episodes (the one in progress at the step budget is
completed, never truncated) and reports mean, population standard
deviation, high score, and episode count. Cross-column comparisons use the
geometric mean of per-environment means, expressed as a percentage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .envs import EnvSpec, build_env
from .errors import ConfigError, DomainError
from .rng import EVAL


@dataclass
class EvalReport:
    episode_scores: list[float]
    mean: float
    std: float  # population standard deviation
    high: float
    episodes: int
    env_steps_used: int

    @classmethod
    def from_scores(cls, scores: list[float], env_steps_used: int) -> "EvalReport":
        if not scores:
            raise ConfigError("an evaluation needs at least one episode")
        arr = np.asarray(scores, dtype=np.float64)
        return cls(
            episode_scores=list(map(float, scores)),
            mean=float(arr.mean()),
            std=float(arr.std()),
            high=float(arr.max()),
            episodes=len(scores),
            env_steps_used=int(env_steps_used),
        )


def evaluate(policy, env_spec: EnvSpec, total_steps: int, seed: int) -> EvalReport:
    """Run full episodes until the step budget is spent.

    Actions are sampled from policy.action_probabilities; both environment
    dynamics and sampling draw from eval-specific streams, so reruns with
    the same seed are bit-identical.
    """
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    env_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((int(seed), EVAL, 0)))
    )
    env = build_env(env_spec, env_rng)
    action_rng = streams.generator(seed, EVAL, 1)

    scores: list[float] = []
    steps_used = 0
    while steps_used < total_steps:
        obs = env.reset()
        episode_return = 0.0
        while True:
            probs = policy.action_probabilities(obs[None, :])[0]
            u = action_rng.random()
            action = min(
                int(np.searchsorted(np.cumsum(probs), u, side="right")),
                env.action_count - 1,
            )
            result = env.step(action)
            episode_return += result.reward
            steps_used += 1
            if result.done:
                break
            obs = result.observation
        scores.append(episode_return)
    return EvalReport.from_scores(scores, steps_used)


def geometric_mean_ratio(scores_a, scores_b) -> float:
    """100 * geomean(a) / geomean(b), computed in log space."""
    a = list(scores_a)
    b = list(scores_b)
    if len(a) != len(b) or not a:
        raise ConfigError("score lists must share a positive length")
    for name, values in (("a", a), ("b", b)):
        for i, v in enumerate(values):
            if v <= 0:
                raise DomainError(f"scores_{name}[{i}] = {v} is not positive")
    log_ratio = float(np.mean(np.log(a)) - np.mean(np.log(b)))
    return 100.0 * math.exp(log_ratio)


@dataclass
class ScoreCell:
    """One (environment, agent) cell: mean with spread and best episode."""

    mean: float
    std: float = 0.0
    high: float = 0.0
    episodes: int = 0


@dataclass
class ComparisonReport:
    row_names: list[str]
    columns: dict[str, dict[str, ScoreCell]]
    teacher: str
    baseline: str
    pct_of_teacher: dict[str, float] = field(default_factory=dict)
    pct_of_baseline: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        """Aligned table: one row per environment, mean +/- std (high)."""
        headers = ["env"] + list(self.columns)
        body = []
        for row in self.row_names:
            cells = [row]
            for name in self.columns:
                c = self.columns[name][row]
                cells.append(f"{c.mean:g} +/- {c.std:g} (hi {c.high:g})")
            body.append(cells)
        for label, ratios in (
            (f"% of teacher ({self.teacher})", self.pct_of_teacher),
            (f"% of baseline ({self.baseline})", self.pct_of_baseline),
        ):
            body.append([label] + [f"{ratios[name]:.0f}%" for name in self.columns])
        widths = [
            max(len(str(line[i])) for line in [headers] + body)
            for i in range(len(headers))
        ]
        lines = []
        for line in [headers] + body:
            lines.append("  ".join(str(cell).ljust(w) for cell, w in zip(line, widths)))
        return "\n".join(lines)

    def to_csv_rows(self) -> list[list[str]]:
        """Long-form rows matching the `env,agent,episodes,mean,std,high` schema,
        followed by the two geometric-mean ratio rows."""
        rows = []
        for row in self.row_names:
            for name in self.columns:
                c = self.columns[name][row]
                rows.append([row, name, str(c.episodes), str(c.mean), str(c.std), str(c.high)])
        for label, ratios in (
            ("% of teacher", self.pct_of_teacher),
            ("% of baseline", self.pct_of_baseline),
        ):
            for name in self.columns:
                rows.append([label, name, "", str(ratios[name]), "", ""])
        return rows


def comparison_report(
    columns: dict[str, dict[str, ScoreCell]],
    teacher: str,
    baseline: str | None = None,
) -> ComparisonReport:
    """Cross-agent score table with geometric-mean percentage rows.

    Every column must cover the same environments as the teacher column.
    The baseline defaults to the first column.
    """
    if teacher not in columns:
        raise ConfigError(f"teacher column {teacher!r} not among {list(columns)}")
    if baseline is None:
        baseline = next(iter(columns))
    if baseline not in columns:
        raise ConfigError(f"baseline column {baseline!r} not among {list(columns)}")
    row_names = list(columns[teacher])
    for name, cells in columns.items():
        for row in row_names:
            if row not in cells:
                raise ConfigError(f"column {name!r} is missing row {row!r}")

    def means(name: str) -> list[float]:
        return [columns[name][row].mean for row in row_names]

    report = ComparisonReport(row_names, dict(columns), teacher, baseline)
    for name in columns:
        report.pct_of_teacher[name] = geometric_mean_ratio(means(name), means(teacher))
        report.pct_of_baseline[name] = geometric_mean_ratio(means(name), means(baseline))
    return report
