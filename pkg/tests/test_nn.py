import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalegm import nn
from causalegm.errors import ConfigError, ContractError, ShapeError
from conftest import central_fd, flat, rel_err


def _linear(w, b=0.0, dtype=jnp.float64, **kw):
    w = np.asarray(w, dtype=np.float64).reshape(-1, 1)
    spec = nn.MlpSpec((w.shape[0], 1), **kw)
    return nn.Mlp(params=[{"w": jnp.asarray(w, dtype), "b": jnp.full((1,), b, dtype)}], state=[], spec=spec)


def test_biases_start_at_zero():
    net = nn.mlp_init(nn.MlpSpec((2, 3, 1)), 3)
    assert all(np.all(np.asarray(layer["b"]) == 0) for layer in net.params)


def test_init_is_deterministic_per_seed():
    a = nn.mlp_init(nn.MlpSpec((2, 3, 1)), 7)
    b = nn.mlp_init(nn.MlpSpec((2, 3, 1)), 7)
    np.testing.assert_array_equal(flat(a.params), flat(b.params))


def test_init_respects_glorot_bound():
    net = nn.mlp_init(nn.MlpSpec((20, 30, 5)), 0)
    for layer in net.params:
        fan_in, fan_out = layer["w"].shape
        assert np.max(np.abs(np.asarray(layer["w"]))) <= np.sqrt(6 / (fan_in + fan_out))


def test_parameter_count_matches_layer_arithmetic():
    sizes = (200, 64, 64, 64, 64, 10)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    assert expected == 12864 + 3 * 4160 + 650 == 25994
    assert nn.n_params(nn.mlp_init(nn.MlpSpec(sizes), 0)) == expected


@pytest.mark.parametrize("sizes", [(), (3,), (2, 0, 1)])
def test_invalid_specs_rejected(sizes):
    with pytest.raises(ConfigError):
        nn.MlpSpec(sizes)


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.1])
def test_slope_must_lie_in_unit_interval(slope):
    with pytest.raises(ConfigError):
        nn.MlpSpec((2, 1), slope=slope)


def test_zero_network_outputs_zero():
    net = nn.mlp_init(nn.MlpSpec((2, 3, 1)), 0, dtype=jnp.float64)
    net = nn.with_params(net, jax.tree_util.tree_map(jnp.zeros_like, net.params))
    assert float(net(np.array([[1.0, 2.0]]))[0, 0]) == 0.0


def test_leaky_relu_negative_branch():
    spec = nn.MlpSpec((1, 1, 1), slope=0.2)
    params = [{"w": jnp.ones((1, 1)), "b": jnp.zeros(1)}, {"w": jnp.ones((1, 1)), "b": jnp.zeros(1)}]
    net = nn.Mlp(params=params, state=[], spec=spec)
    assert float(net(np.array([[-1.0]]))[0, 0]) == pytest.approx(-0.2, abs=1e-7)


def test_sigmoid_output_at_zero():
    net = _linear([0.0], output_activation="sigmoid")
    assert float(net(np.array([[3.0]]))[0, 0]) == 0.5


def test_forward_rejects_width_mismatch():
    net = nn.mlp_init(nn.MlpSpec((3, 2)), 0)
    with pytest.raises(ShapeError):
        net(np.zeros((4, 2)))


def test_batch_norm_train_mode_standardises():
    spec = nn.MlpSpec((3, 4, 1), batch_norm=True)
    net = nn.mlp_init(spec, 0, dtype=jnp.float64)
    x = np.random.default_rng(0).normal(5.0, 10.0, size=(64, 3))
    h = jnp.asarray(x) @ net.params[0]["w"] + net.params[0]["b"]
    z = (h - h.mean(0)) / jnp.sqrt(h.var(0) + nn.BN_EPS)
    assert np.max(np.abs(np.asarray(z.mean(0)))) < 1e-6
    assert np.max(np.abs(np.asarray(z.var(0)) - 1)) < 1e-6
    # the network's own train-mode path uses exactly this normalisation
    out, new = nn.forward_train(net, x)
    manual = nn.leaky_relu(z, spec.slope) @ net.params[1]["w"] + net.params[1]["b"]
    np.testing.assert_allclose(np.asarray(out), np.asarray(manual), rtol=1e-12)
    assert np.all(np.asarray(new.state[0]["var"]) >= 0)


def test_eval_mode_uses_running_statistics():
    spec = nn.MlpSpec((2, 3, 1), batch_norm=True)
    net = nn.mlp_init(spec, 1, dtype=jnp.float64)
    x = np.random.default_rng(1).normal(size=(8, 2))
    a = np.asarray(net(x[:1]))
    b = np.asarray(net(x)[:1])
    np.testing.assert_array_equal(a, b)  # rows independent in eval mode


def test_param_gradient_of_zero_network():
    net = nn.mlp_init(nn.MlpSpec((2, 1)), 0, dtype=jnp.float64)
    params = jax.tree_util.tree_map(jnp.zeros_like, net.params)
    g = nn.param_gradients(lambda p: jnp.sum(nn.apply(net.spec, p, [], jnp.ones((3, 2)))[0] ** 2), params)
    assert np.all(flat(g) == 0)


def test_param_gradients_match_finite_differences():
    spec = nn.MlpSpec((2, 3, 1))  # 13 parameters
    net = nn.mlp_init(spec, 5, dtype=jnp.float64)
    x = jnp.asarray(np.random.default_rng(2).normal(size=(6, 2)))

    def objective(p):
        return jnp.sum(jnp.sin(nn.apply(spec, p, [], x)[0]))

    g = nn.param_gradients(objective, net.params)
    assert rel_err(flat(g), central_fd(objective, net.params)) < 1e-6


def test_penalty_gradient_on_linear_critic_closed_form():
    w = np.array([0.3, -1.2, 0.5])
    net = _linear(w)
    z = jnp.asarray(np.random.default_rng(3).normal(size=(5, 3)))

    def penalty(p):
        g = nn.critic_input_gradient(net.spec, p, [], z)
        return jnp.mean((nn.safe_norm(g) - 1.0) ** 2)

    got = np.asarray(nn.param_gradients(penalty, net.params)[0]["w"]).ravel()
    norm = np.linalg.norm(w)
    np.testing.assert_allclose(got, 2 * (norm - 1) * w / norm, rtol=1e-12)


def test_input_gradient_of_linear_critic_is_weight():
    w = np.array([1.5, -0.5])
    g = nn.input_gradient(_linear(w, 0.7), np.random.default_rng(0).normal(size=(4, 2)))
    np.testing.assert_allclose(np.asarray(g), np.tile(w, (4, 1)), rtol=0, atol=0)


def test_input_gradient_single_positive_unit():
    spec = nn.MlpSpec((1, 1, 1), slope=0.2)
    params = [{"w": jnp.full((1, 1), 0.8, jnp.float64), "b": jnp.zeros(1, jnp.float64)},
              {"w": jnp.ones((1, 1), jnp.float64), "b": jnp.zeros(1, jnp.float64)}]
    g = nn.input_gradient(nn.Mlp(params=params, state=[], spec=spec), np.array([[2.0]]))
    assert float(g[0, 0]) == pytest.approx(0.8, rel=1e-15)


def test_input_gradient_matches_finite_differences():
    spec = nn.MlpSpec((3, 4, 4, 1))
    net = nn.mlp_init(spec, 9, dtype=jnp.float64)
    x = np.random.default_rng(4).normal(size=(3, 3))
    g = np.asarray(nn.input_gradient(net, x))
    fd = np.empty_like(x)
    for i in range(x.shape[0]):
        fd[i] = central_fd(lambda row: nn.forward(net, row.reshape(1, -1))[0, 0], jnp.asarray(x[i]))
    assert rel_err(g, fd) < 1e-6


def test_input_gradient_requires_scalar_output():
    with pytest.raises(ContractError):
        nn.input_gradient(nn.mlp_init(nn.MlpSpec((2, 2)), 0), np.zeros((1, 2)))


def test_safe_norm_gradient_is_zero_at_origin():
    g = jax.grad(lambda v: nn.safe_norm(v))(jnp.zeros(3))
    assert np.all(np.asarray(g) == 0)


def test_adam_zero_gradient_leaves_params():
    params = {"a": jnp.array([1.0, -2.0])}
    state = nn.adam_init(params, lr=0.1)
    new, state = nn.adam_step(state, params, {"a": jnp.zeros(2)})
    np.testing.assert_array_equal(np.asarray(new["a"]), [1.0, -2.0])
    assert int(state.step) == 1


def test_adam_first_step_moves_by_lr():
    params = jnp.array([0.5])
    state = nn.adam_init(params, lr=0.01, eps=0.0)
    new, _ = nn.adam_step(state, params, jnp.array([-3.0]))
    assert float(new[0] - params[0]) == pytest.approx(0.01, rel=1e-12)


def test_adam_five_step_recurrence():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    params = jnp.array([0.0])
    state = nn.adam_init(params, lr=lr, b1=b1, b2=b2, eps=eps)
    theta, m, v = 0.0, 0.0, 0.0
    for t in range(1, 6):
        params, state = nn.adam_step(state, params, jnp.array([1.0]))
        m = b1 * m + (1 - b1)
        v = b2 * v + (1 - b2)
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert abs(float(params[0]) - theta) < 1e-12
    assert np.all(np.asarray(state.v) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_adam_second_moment_never_negative(grads):
    params = jnp.zeros(1)
    state = nn.adam_init(params)
    for g in grads:
        params, state = nn.adam_step(state, params, jnp.array([g]))
        assert float(state.v[0]) >= 0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_shapes_chain_for_any_spec(d_in, width, seed):
    spec = nn.MlpSpec((d_in, width, 2))
    net = nn.mlp_init(spec, seed)
    assert [layer["w"].shape for layer in net.params] == [(d_in, width), (width, 2)]
    assert net(np.zeros((3, d_in))).shape == (3, 2)
