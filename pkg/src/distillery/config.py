"""Flat `key = value` experiment configuration.

The file format is plain UTF-8 text: one assignment per line, `#` starts a
comment, and dotted prefixes group keys by module (`ppo.gamma = 0.99`).
Unknown keys are rejected outright so typos cannot silently change runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .distill import DistillConfig
from .envs import EnvSpec
from .errors import ConfigError
from .nets import CapacityTier, DEFAULT_TIER_WIDTHS
from .ppo import PPOConfig


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


def _parse_optional_int(text: str):
    return None if text.lower() in ("none", "") else int(text)


# key -> (parser, default). Defaults mirror the owning dataclasses.
KNOWN_KEYS = {
    "env.id": (str, "chain"),
    "env.n": (int, 10),
    "env.slip": (float, 0.1),
    "env.size": (int, 5),
    "env.gravity": (float, 9.8),
    "env.cart_mass": (float, 1.0),
    "env.pole_mass": (float, 0.1),
    "env.half_length": (float, 0.5),
    "env.force": (float, 10.0),
    "env.dt": (float, 0.02),
    "env.step_cap": (_parse_optional_int, None),
    "tier": (str, "high"),
    "tier.high_widths": (_parse_int_list, DEFAULT_TIER_WIDTHS["high"]),
    "tier.medium_widths": (_parse_int_list, DEFAULT_TIER_WIDTHS["medium"]),
    "tier.low_widths": (_parse_int_list, DEFAULT_TIER_WIDTHS["low"]),
    "seed": (int, 0),
    "out_dir": (str, ""),
    "ppo.gamma": (float, 0.99),
    "ppo.lambda": (float, 0.95),
    "ppo.clip": (float, 0.1),
    "ppo.update_epochs": (int, 10),
    "ppo.minibatch_size": (int, 32),
    "ppo.num_actors": (int, 16),
    "ppo.horizon": (int, 128),
    "ppo.stepsize": (float, 3e-4),
    "ppo.value_coef": (float, 0.5),
    "ppo.entropy_coef": (float, 0.01),
    "ppo.total_env_steps": (int, 204_800),
    "distill.epochs": (int, 10),
    "distill.minibatch_size": (int, 32),
    "distill.stepsize": (float, 3e-4),
    "distill.temperature": (float, 1.0),
    "distill.floor": (float, 1e-8),
    "distill.records": (int, 50_000),
    "eval.total_steps": (int, 50_000),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; rejects unknown keys and malformed lines."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = value
    return values


@dataclass
class ExperimentConfig:
    env: EnvSpec
    tier: CapacityTier
    ppo: PPOConfig
    distill: DistillConfig
    eval_steps: int
    records: int
    seed: int
    out_dir: str
    resolved: dict  # every known key with its effective value

    def tier_named(self, tag: str) -> CapacityTier:
        widths = self.resolved[f"tier.{tag}_widths"]
        return CapacityTier(tag, tuple(widths))


def resolve_config(raw: dict[str, str]) -> ExperimentConfig:
    """Typed configuration from raw strings, with defaults filled in."""
    resolved = {}
    for key, (parser, default) in KNOWN_KEYS.items():
        if key in raw:
            try:
                resolved[key] = parser(raw[key])
            except (ValueError, TypeError) as err:
                raise ConfigError(f"config key {key!r}: {err}") from err
        else:
            resolved[key] = default

    env = EnvSpec(
        id=resolved["env.id"],
        n=resolved["env.n"],
        slip=resolved["env.slip"],
        size=resolved["env.size"],
        gravity=resolved["env.gravity"],
        cart_mass=resolved["env.cart_mass"],
        pole_mass=resolved["env.pole_mass"],
        half_length=resolved["env.half_length"],
        force=resolved["env.force"],
        dt=resolved["env.dt"],
        step_cap=resolved["env.step_cap"],
    )
    tier_tag = resolved["tier"]
    if tier_tag not in DEFAULT_TIER_WIDTHS:
        raise ConfigError(f"unknown capacity tier {tier_tag!r}")
    tier = CapacityTier(tier_tag, tuple(resolved[f"tier.{tier_tag}_widths"]))
    ppo = PPOConfig(
        gamma=resolved["ppo.gamma"],
        lam=resolved["ppo.lambda"],
        clip=resolved["ppo.clip"],
        update_epochs=resolved["ppo.update_epochs"],
        minibatch_size=resolved["ppo.minibatch_size"],
        num_actors=resolved["ppo.num_actors"],
        horizon=resolved["ppo.horizon"],
        stepsize=resolved["ppo.stepsize"],
        value_coef=resolved["ppo.value_coef"],
        entropy_coef=resolved["ppo.entropy_coef"],
        total_env_steps=resolved["ppo.total_env_steps"],
    ).validate()
    distill = DistillConfig(
        epochs=resolved["distill.epochs"],
        minibatch_size=resolved["distill.minibatch_size"],
        stepsize=resolved["distill.stepsize"],
        temperature=resolved["distill.temperature"],
        floor=resolved["distill.floor"],
    ).validate()
    if resolved["eval.total_steps"] < 1:
        raise ConfigError("eval.total_steps must be >= 1")
    if resolved["distill.records"] < 1:
        raise ConfigError("distill.records must be >= 1")
    return ExperimentConfig(
        env=env,
        tier=tier,
        ppo=ppo,
        distill=distill,
        eval_steps=resolved["eval.total_steps"],
        records=resolved["distill.records"],
        seed=resolved["seed"],
        out_dir=resolved["out_dir"],
        resolved=resolved,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return resolve_config(parse_config_text(text))


def default_config() -> ExperimentConfig:
    return resolve_config({})


def hash_of_mapping(mapping: dict) -> str:
    """Short deterministic digest of a key -> value mapping."""
    canonical = "\n".join(f"{k} = {mapping[k]!r}" for k in sorted(mapping))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def config_hash(config: ExperimentConfig) -> str:
    return hash_of_mapping(config.resolved)
