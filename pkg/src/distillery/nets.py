"""Dense actor-critic substrate: forward/backward passes, softmax, Adam.

A network is a stack of dense layers (the body) feeding two linear heads, a
policy head producing one logit per action and a value head producing a
scalar. All arithmetic is float64; persistence quantizes to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NumericError, UsageError

ACTIVATIONS = ("tanh", "linear")

DEFAULT_TIER_WIDTHS = {
    "high": (64, 64),
    "medium": (32, 32),
    "low": (16, 16),
}

# Parameter-count ceilings relative to the high tier, mirroring the
# ~25% / ~7% body sizes of the reference capacity ladder.
MEDIUM_RATIO_LIMIT = 0.35
LOW_RATIO_LIMIT = 0.15


@dataclass
class DenseLayer:
    """One affine map with an activation tag; weight is [out, in]."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ConfigError("dense layer expects 2-D weight and 1-D bias")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ConfigError(
                f"bias length {self.bias.shape[0]} does not match "
                f"weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class ActorCriticNet:
    """Shared dense body with a policy head (logits) and a value head (scalar)."""

    obs_dim: int
    action_count: int
    body: list[DenseLayer]
    policy_head: DenseLayer
    value_head: DenseLayer

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ConfigError("obs_dim must be positive")
        if self.action_count < 2:
            raise ConfigError("action_count must be at least 2")
        dim = self.obs_dim
        for i, layer in enumerate(self.body):
            if layer.in_dim != dim:
                raise ConfigError(
                    f"body layer {i} expects input {layer.in_dim}, got {dim}"
                )
            dim = layer.out_dim
        for name, head in (("policy", self.policy_head), ("value", self.value_head)):
            if head.in_dim != dim:
                raise ConfigError(
                    f"{name} head expects input {head.in_dim}, body produces {dim}"
                )
        if self.policy_head.out_dim != self.action_count:
            raise ConfigError(
                f"policy head produces {self.policy_head.out_dim} logits, "
                f"expected {self.action_count}"
            )
        if self.value_head.out_dim != 1:
            raise ConfigError("value head must produce exactly one output")

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.body)

    def all_layers(self) -> list[DenseLayer]:
        return list(self.body) + [self.policy_head, self.value_head]

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays in canonical (body..., policy, value) order."""
        params = []
        for layer in self.all_layers():
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def copy(self) -> "ActorCriticNet":
        return ActorCriticNet(
            self.obs_dim,
            self.action_count,
            [layer.copy() for layer in self.body],
            self.policy_head.copy(),
            self.value_head.copy(),
        )

    def action_probabilities(self, obs_batch: np.ndarray) -> np.ndarray:
        """Softmax of the policy logits for a [B, obs_dim] batch."""
        logits, _, _ = forward(self, obs_batch)
        return softmax(logits)


@dataclass
class ForwardCache:
    """Activations recorded by forward(); consumed once by backward()."""

    net: ActorCriticNet
    activations: list[np.ndarray]  # [input, body act 0, ..., body act L-1]

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[0]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, safe for any finite input.

    The max is subtracted before dividing by the temperature, so no
    intermediate can overflow regardless of the logit scale.
    """
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    # A -inf from subtracting two huge finite logits is fine: exp gives 0.
    with np.errstate(over="ignore"):
        shifted = (z - np.max(z, axis=-1, keepdims=True)) / temperature
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def forward(net: ActorCriticNet, obs_batch: np.ndarray):
    """Run the network on a [B, obs_dim] batch.

    Returns (logits [B, A], values [B], cache) where the cache holds every
    activation backward() needs.
    """
    obs = np.asarray(obs_batch, dtype=np.float64)
    if obs.ndim != 2:
        raise ConfigError(f"observation batch must be 2-D, got shape {obs.shape}")
    if obs.shape[0] < 1 or obs.shape[1] != net.obs_dim:
        raise ConfigError(
            f"observation batch shape {obs.shape} incompatible with obs_dim {net.obs_dim}"
        )
    if not np.all(np.isfinite(obs)):
        raise NumericError("non-finite observation at forward input")

    h = obs
    activations = [obs]
    # Finiteness is checked explicitly per layer; mute numpy's warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(net.body):
            z = h @ layer.weight.T + layer.bias
            h = np.tanh(z) if layer.activation == "tanh" else z
            if not np.all(np.isfinite(h)):
                raise NumericError(f"non-finite activation at body layer {i}")
            activations.append(h)

        logits = h @ net.policy_head.weight.T + net.policy_head.bias
        values = (h @ net.value_head.weight.T + net.value_head.bias)[:, 0]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite output at policy head")
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite output at value head")
    return logits, values, ForwardCache(net=net, activations=activations)


def backward(
    net: ActorCriticNet,
    cache: ForwardCache,
    dloss_dlogits: np.ndarray,
    dloss_dvalues: np.ndarray,
) -> list[np.ndarray]:
    """Exact gradients of the scalar loss whose output partials are supplied.

    The caller bakes any batch averaging into dloss_dlogits / dloss_dvalues;
    backward only applies the chain rule. Gradients come back in the same
    order as net.parameters().
    """
    if cache.net is not net:
        raise UsageError("cache was produced by a different network")
    dlogits = np.asarray(dloss_dlogits, dtype=np.float64)
    dvalues = np.asarray(dloss_dvalues, dtype=np.float64)
    b = cache.batch_size
    if dlogits.shape != (b, net.action_count) or dvalues.shape != (b,):
        raise UsageError(
            f"output gradients {dlogits.shape}/{dvalues.shape} do not match "
            f"cached batch of {b}"
        )

    h_last = cache.activations[-1]
    grads_policy = [dlogits.T @ h_last, dlogits.sum(axis=0)]
    grads_value = [dvalues[None, :] @ h_last, np.array([dvalues.sum()])]

    dh = dlogits @ net.policy_head.weight + dvalues[:, None] * net.value_head.weight
    body_grads = []
    for i in range(len(net.body) - 1, -1, -1):
        layer = net.body[i]
        h_out = cache.activations[i + 1]
        h_in = cache.activations[i]
        dz = dh * (1.0 - h_out**2) if layer.activation == "tanh" else dh
        body_grads.append([dz.T @ h_in, dz.sum(axis=0)])
        dh = dz @ layer.weight

    grads: list[np.ndarray] = []
    for pair in reversed(body_grads):
        grads.extend(pair)
    grads.extend(grads_policy)
    grads.extend(grads_value)
    return grads


@dataclass
class AdamState:
    """Adam moment accumulators; shapes mirror the parameter list."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_parameters(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    stepsize: float,
):
    """Standard bias-corrected Adam update, in place.

    A non-finite gradient rejects the whole update before any state mutates.
    """
    if stepsize <= 0:
        raise DomainError(f"stepsize must be positive, got {stepsize}")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ConfigError("parameter, gradient, and state lists must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= stepsize * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        if not np.all(np.isfinite(p)):
            raise NumericError("parameters became non-finite during Adam update")
    return params, state


def parameter_count(net: ActorCriticNet) -> int:
    return int(sum(p.size for p in net.parameters()))


def count_parameters(obs_dim: int, action_count: int, hidden_widths) -> int:
    """Scalar parameter count for the given topology, without building it."""
    total = 0
    dim = obs_dim
    for width in hidden_widths:
        total += dim * width + width
        dim = width
    total += dim * action_count + action_count  # policy head
    total += dim * 1 + 1  # value head
    return total


@dataclass(frozen=True)
class CapacityTier:
    """A named network size class: tag plus hidden layer widths."""

    tag: str
    hidden_widths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.tag not in DEFAULT_TIER_WIDTHS:
            raise ConfigError(f"unknown capacity tier {self.tag!r}")
        widths = self.hidden_widths or DEFAULT_TIER_WIDTHS[self.tag]
        if any(w < 1 for w in widths):
            raise ConfigError("hidden widths must be positive")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in widths))

    @classmethod
    def default(cls, tag: str) -> "CapacityTier":
        return cls(tag)


def _scaled_uniform(rng: np.random.Generator, out_dim: int, in_dim: int, gain: float):
    limit = gain * np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def build_network(
    obs_dim: int,
    action_count: int,
    hidden_widths,
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
) -> ActorCriticNet:
    """Freshly initialized network.

    Body and value head use gain 1.0; the policy head uses gain 0.01 so the
    initial policy is near-uniform. Biases start at zero.
    """
    widths = tuple(int(w) for w in hidden_widths)
    body = []
    dim = obs_dim
    for width in widths:
        body.append(
            DenseLayer(
                _scaled_uniform(rng, width, dim, 1.0),
                np.zeros(width),
                hidden_activation,
            )
        )
        dim = width
    policy = DenseLayer(
        _scaled_uniform(rng, action_count, dim, 0.01), np.zeros(action_count)
    )
    value = DenseLayer(_scaled_uniform(rng, 1, dim, 1.0), np.zeros(1))
    return ActorCriticNet(obs_dim, action_count, body, policy, value)


def reinitialize_value_head(net: ActorCriticNet, rng: np.random.Generator) -> None:
    """Replace the critic weights with a fresh draw; the actor is untouched."""
    dim = net.value_head.in_dim
    net.value_head.weight[...] = _scaled_uniform(rng, 1, dim, 1.0)
    net.value_head.bias[...] = 0.0
