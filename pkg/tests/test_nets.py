import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillery import rng as streams
from distillery.errors import ConfigError, DomainError, NumericError, UsageError
from distillery.nets import (
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
from distillery.envs import EnvSpec

from oracles import finite_difference_grads, max_relative_error, naive_forward


def tiny_net(obs_dim=3, action_count=3, hidden=(6,), seed=0):
    return build_network(obs_dim, action_count, hidden, streams.generator(seed, streams.INIT))


def zero_net(obs_dim=4, action_count=2, hidden=(5,)):
    net = build_network(obs_dim, action_count, hidden, streams.generator(0, 99))
    for p in net.parameters():
        p[...] = 0.0
    return net


# --- forward -----------------------------------------------------------


def test_forward_zero_net_gives_zero_outputs():
    net = zero_net()
    obs = np.arange(8.0).reshape(2, 4)
    logits, values, _ = forward(net, obs)
    assert np.all(logits == 0.0)
    assert np.all(values == 0.0)


def test_forward_identity_policy_head_maps_basis_vectors():
    n = 4
    net = ActorCriticNet(
        obs_dim=n,
        action_count=n,
        body=[],
        policy_head=DenseLayer(np.eye(n), np.zeros(n)),
        value_head=DenseLayer(np.zeros((1, n)), np.zeros(1)),
    )
    for k in range(n):
        e_k = np.zeros((1, n))
        e_k[0, k] = 1.0
        logits, _, _ = forward(net, e_k)
        np.testing.assert_allclose(logits[0], e_k[0])


def test_forward_matches_naive_triple_loop_oracle():
    spec = EnvSpec(id="chain", n=10)
    net = build_network(spec.obs_dim, spec.action_count, (64, 64),
                        streams.generator(1337, streams.INIT))
    obs = np.eye(10)  # every one-hot observation
    logits, values, _ = forward(net, obs)
    ref_logits, ref_values = naive_forward(net, obs)
    np.testing.assert_allclose(logits, ref_logits, atol=1e-12)
    np.testing.assert_allclose(values, ref_values, atol=1e-12)


def test_forward_is_deterministic():
    net = tiny_net()
    obs = streams.generator(5, 50).normal(size=(7, 3))
    first = forward(net, obs)
    second = forward(net, obs)
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


def test_forward_rejects_bad_shapes_and_nonfinite():
    net = tiny_net()
    with pytest.raises(ConfigError):
        forward(net, np.zeros((2, 5)))
    with pytest.raises(ConfigError):
        forward(net, np.zeros(3))
    with pytest.raises(NumericError):
        forward(net, np.array([[np.nan, 0.0, 0.0]]))


def test_forward_reports_layer_index_on_numeric_fault():
    net = tiny_net(hidden=(4, 4))
    net.body[1].weight[...] = np.inf
    with pytest.raises(NumericError, match="layer 1"):
        forward(net, np.ones((1, 3)))


# --- softmax -----------------------------------------------------------


def test_softmax_symmetric_pair():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_temperature_example():
    got = softmax(np.array([1.0, 1.01]), temperature=0.01)
    np.testing.assert_allclose(got, [0.26894, 0.73106], atol=1e-4)


def test_softmax_sharp_temperature_concentrates():
    got = softmax(np.array([1.0, 2.0]), temperature=0.01)
    assert got[1] >= 1.0 - 1e-6


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(DomainError):
        softmax(np.array([1.0, 2.0]), temperature=0.0)
    with pytest.raises(DomainError):
        softmax(np.array([1.0, 2.0]), temperature=-1.0)


def test_softmax_no_overflow_for_extreme_logits():
    got = softmax(np.array([1e308, -1e308, 0.0]), temperature=0.01)
    assert np.all(np.isfinite(got))
    assert got[0] == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=-100.0, max_value=100.0), min_size=2, max_size=18),
    st.floats(min_value=-50.0, max_value=50.0),
)
def test_softmax_sums_to_one_and_is_translation_invariant(logits, shift):
    z = np.array(logits)
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0.0)
    np.testing.assert_allclose(p, softmax(z + shift), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    # Grid-valued logits keep gaps representable after the temperature
    # division; exact ties resolve to the lowest index on both sides.
    st.lists(st.integers(min_value=-5000, max_value=5000), min_size=2, max_size=18),
    st.sampled_from([1e3, 10.0, 1.0, 0.1, 0.01, 1e-3]),
)
def test_softmax_temperature_preserves_argmax(logit_grid, temperature):
    z = np.array(logit_grid, dtype=np.float64) / 100.0
    assert int(np.argmax(softmax(z, temperature=temperature))) == int(np.argmax(z))


# --- backward ----------------------------------------------------------


def test_backward_zero_output_grads_give_zero_parameter_grads():
    net = tiny_net()
    obs = streams.generator(2, 50).normal(size=(4, 3))
    _, _, cache = forward(net, obs)
    grads = backward(net, cache, np.zeros((4, 3)), np.zeros(4))
    assert all(np.all(g == 0.0) for g in grads)


def test_backward_single_linear_layer_closed_form():
    # Policy-head-only net; L = 0.5 * sum((logits - target)^2) on one sample.
    rng = streams.generator(7, 50)
    weight = rng.normal(size=(2, 3))
    net = ActorCriticNet(
        obs_dim=3,
        action_count=2,
        body=[],
        policy_head=DenseLayer(weight, np.zeros(2)),
        value_head=DenseLayer(np.zeros((1, 3)), np.zeros(1)),
    )
    obs = np.array([[0.5, -1.0, 2.0]])
    target = np.array([0.3, -0.7])
    logits, _, cache = forward(net, obs)
    residual = logits[0] - target
    grads = backward(net, cache, residual[None, :], np.zeros(1))
    np.testing.assert_allclose(grads[0], np.outer(residual, obs[0]), atol=1e-14)
    np.testing.assert_allclose(grads[1], residual, atol=1e-14)


def test_backward_matches_finite_differences_squared_value_loss():
    rng = streams.generator(11, 50)
    net = tiny_net(hidden=(6,), seed=11)
    obs = rng.normal(size=(5, 3))
    targets = rng.normal(size=5)

    def loss():
        _, values, _ = forward(net, obs)
        return float(np.mean((values - targets) ** 2))

    _, values, cache = forward(net, obs)
    dvalues = 2.0 * (values - targets) / 5.0
    analytic = backward(net, cache, np.zeros((5, 3)), dvalues)
    numeric = finite_difference_grads(loss, net.parameters())
    assert max_relative_error(analytic, numeric) < 1e-4


def test_backward_rejects_stale_or_mismatched_cache():
    net = tiny_net()
    other = tiny_net(seed=1)
    _, _, cache = forward(net, np.ones((2, 3)))
    with pytest.raises(UsageError):
        backward(other, cache, np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(UsageError):
        backward(net, cache, np.zeros((3, 3)), np.zeros(3))


# --- adam --------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameters():
    net = tiny_net()
    params = net.parameters()
    before = [p.copy() for p in params]
    state = AdamState.for_parameters(params)
    adam_step(params, [np.zeros_like(p) for p in params], state, 3e-4)
    assert state.step == 1
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p, b)


def test_adam_first_step_is_signed_stepsize():
    params = [np.array([1.0, -2.0, 3.0])]
    grads = [np.array([0.5, -0.25, 1.5])]
    state = AdamState.for_parameters(params)
    adam_step(params, grads, state, 0.1)
    expected = np.array([1.0, -2.0, 3.0]) - 0.1 * np.sign(grads[0])
    np.testing.assert_allclose(params[0], expected, atol=1e-6)


def test_adam_converges_on_scalar_quadratic():
    params = [np.array([0.0])]
    state = AdamState.for_parameters(params)
    for _ in range(200):
        grads = [2.0 * (params[0] - 3.0)]
        adam_step(params, grads, state, 0.1)
    assert abs(params[0][0] - 3.0) < 0.05
    assert state.step == 200


def test_adam_rejects_nonfinite_gradient_without_mutating():
    params = [np.array([1.0, 2.0])]
    state = AdamState.for_parameters(params)
    with pytest.raises(NumericError):
        adam_step(params, [np.array([np.nan, 0.0])], state, 0.1)
    np.testing.assert_array_equal(params[0], [1.0, 2.0])
    assert state.step == 0


# --- parameter accounting ----------------------------------------------


def test_parameter_count_heads_only():
    net = ActorCriticNet(
        obs_dim=4,
        action_count=2,
        body=[],
        policy_head=DenseLayer(np.zeros((2, 4)), np.zeros(2)),
        value_head=DenseLayer(np.zeros((1, 4)), np.zeros(1)),
    )
    assert parameter_count(net) == 15
    assert count_parameters(4, 2, []) == 15


def test_parameter_count_high_tier_on_chain():
    spec = EnvSpec(id="chain", n=10)
    net = build_network(spec.obs_dim, spec.action_count, (64, 64),
                        streams.generator(0, streams.INIT))
    # 10*64+64 + 64*64+64 + 64*2+2 + 64*1+1
    assert parameter_count(net) == 5059
    assert count_parameters(10, 2, (64, 64)) == 5059


@pytest.mark.parametrize(
    "spec",
    [EnvSpec(id="chain"), EnvSpec(id="grid"), EnvSpec(id="cartpole_lite")],
    ids=["chain", "grid", "cartpole"],
)
def test_tier_ratios_hold_on_builtin_envs(spec):
    counts = {
        tag: count_parameters(
            spec.obs_dim, spec.action_count, CapacityTier.default(tag).hidden_widths
        )
        for tag in ("high", "medium", "low")
    }
    assert counts["medium"] <= 0.35 * counts["high"]
    assert counts["low"] <= 0.15 * counts["high"]


def test_capacity_tier_rejects_unknown_tag():
    with pytest.raises(ConfigError):
        CapacityTier("huge")


def test_log_softmax_matches_log_of_softmax():
    z = streams.generator(3, 50).normal(size=(4, 6)) * 5.0
    np.testing.assert_allclose(log_softmax(z), np.log(softmax(z)), atol=1e-12)


def test_build_network_policy_head_starts_near_uniform():
    net = build_network(8, 4, (16, 16), streams.generator(21, streams.INIT))
    probs = net.action_probabilities(streams.generator(22, 50).normal(size=(10, 8)))
    np.testing.assert_allclose(probs, 0.25, atol=0.02)
