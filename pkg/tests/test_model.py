import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalegm import model as M
from causalegm import nn
from causalegm.data import Dataset
from causalegm.errors import ConfigError, ContractError, ShapeError, TrainingError
from conftest import cast_model, flat, tiny_config


def _zero(net):
    return nn.with_params(net, jax.tree_util.tree_map(jnp.zeros_like, net.params))


def _linear_net(w, b=None):
    w = jnp.asarray(w, jnp.float64)
    b = jnp.zeros(w.shape[1], jnp.float64) if b is None else jnp.asarray(b, jnp.float64)
    return nn.Mlp(params=[{"w": w, "b": b}], state=[], spec=nn.MlpSpec(w.shape))


# --- configuration and build -------------------------------------------------

def test_default_partition_network_dims():
    m = M.build(M.ModelConfig(p=200))
    specs = {k: v.layer_sizes for k, v in m.config.net_specs().items()}
    assert specs["E"][0] == 200 and specs["E"][-1] == 10
    assert specs["F"][0] == 3 and specs["H"][0] == 2
    assert specs["E"] == (200, 64, 64, 64, 64, 10)
    assert specs["Dz"] == (10, 64, 32, 8, 1)


def test_binary_partition_has_sigmoid_treatment_head():
    cfg = M.ModelConfig(p=20, partition=(3, 3, 6, 6), treatment_kind="binary")
    assert cfg.net_specs()["H"].output_activation == "sigmoid"
    assert cfg.net_specs()["H"].layer_sizes[0] == 9


def test_build_is_deterministic():
    a = M.build(M.ModelConfig(p=5, seed=4))
    b = M.build(M.ModelConfig(p=5, seed=4))
    for k in a.nets:
        np.testing.assert_array_equal(flat(a.nets[k].params), flat(b.nets[k].params))


@pytest.mark.parametrize("kw", [dict(lam=0.0), dict(batch_size=1), dict(iterations=0), dict(p=0),
                                dict(treatment_kind="ordinal"), dict(partition=(0, 1, 1, 1))])
def test_invalid_configs(kw):
    base = dict(p=3)
    base.update(kw)
    with pytest.raises(ConfigError):
        M.ModelConfig(**base)


def test_no_roundtrip_forces_other_flags_off():
    cfg = M.ModelConfig(p=3, use_roundtrip=False)
    assert not cfg.use_v_gan and not cfg.use_z_rec
    assert cfg.net_names == ("E", "F", "H")


def test_partition_slices_are_contiguous():
    part = M.LatentPartition(2, 1, 3, 4)
    assert part.slices() == (slice(0, 2), slice(2, 3), slice(3, 6), slice(6, 10))


def test_config_round_trip():
    cfg = M.ModelConfig(p=7, partition=(2, 1, 1, 3), use_v_gan=False, seed=9)
    assert M.ModelConfig.from_dict(cfg.to_dict()) == cfg


# --- encode -------------------------------------------------------------------

def test_encode_slices_concatenate_to_encoder_output(rng):
    m = M.build(M.ModelConfig(p=6))
    v = rng.normal(size=(5, 6))
    parts = M.encode(m, v)
    assert [p.shape for p in parts] == [(5, 1), (5, 1), (5, 1), (5, 7)]
    np.testing.assert_array_equal(np.concatenate(parts, 1), np.asarray(nn.forward(m.nets["E"], v)))


def test_encode_with_zero_encoder_is_zero(rng):
    m = M.build(M.ModelConfig(p=4))
    m.nets["E"] = _zero(m.nets["E"])
    assert all(np.all(p == 0) for p in M.encode(m, rng.normal(size=(3, 4))))


def test_encode_rejects_wrong_width():
    with pytest.raises(ShapeError):
        M.encode(M.build(M.ModelConfig(p=4)), np.zeros((2, 3)))


# --- adversarial pair -----------------------------------------------------------

def test_zero_critic_losses(rng):
    critic = _zero(nn.mlp_init(nn.MlpSpec((3, 4, 1)), 0, dtype=jnp.float64))
    gen, crit = M.gan_pair_losses(critic, rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), lam=10.0)
    assert gen == 0.0
    assert float(crit) == pytest.approx(10.0, abs=1e-12)


def test_unit_norm_linear_critic_has_no_penalty(rng):
    w = rng.normal(size=(4, 1))
    w /= np.linalg.norm(w)
    critic = _linear_net(w)
    real, fake = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    _, crit = M.gan_pair_losses(critic, real, fake, lam=10.0)
    expected = -np.mean(real @ w) + np.mean(fake @ w)
    assert float(crit) == pytest.approx(expected, abs=1e-12)


def test_linear_critic_closed_form(rng):
    w = rng.normal(size=(3, 1)) * 2
    critic = _linear_net(w, [0.4])
    real, fake = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    gen, crit = M.gan_pair_losses(critic, real, fake, lam=10.0)
    norm = np.linalg.norm(w)
    assert float(gen) == pytest.approx(-np.mean(fake @ w + 0.4), abs=1e-12)
    assert float(crit) == pytest.approx(-np.mean(real @ w) + np.mean(fake @ w) + 10 * (norm - 1) ** 2, abs=1e-10)


def test_gan_pair_rejects_empty_batch():
    critic = _linear_net(np.ones((2, 1)))
    with pytest.raises(ContractError):
        M.gan_pair_losses(critic, np.zeros((0, 2)), np.zeros((0, 2)), 10.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_penalty_is_non_negative(seed):
    r = np.random.default_rng(seed)
    critic = nn.mlp_init(nn.MlpSpec((2, 3, 1)), seed, dtype=jnp.float64)
    real, fake = r.normal(size=(4, 2)), r.normal(size=(4, 2))
    u = r.uniform(size=(4, 1))
    _, with_pen = M.gan_pair_losses(critic, real, fake, lam=10.0, u=u)
    _, tiny_pen = M.gan_pair_losses(critic, real, fake, lam=1e-12, u=u)
    assert float(with_pen) >= float(tiny_pen) - 1e-9


# --- reconstruction and supervised terms ------------------------------------------

def _identity_roundtrip_model():
    cfg = M.ModelConfig(p=3, partition=(1, 1, 1, 0), hidden_layers=0)
    m = cast_model(M.build(cfg))
    m.nets["E"] = _linear_net(np.eye(3))
    m.nets["G"] = _linear_net(np.eye(3))
    return m


def test_identity_roundtrip_has_zero_reconstruction(rng):
    m = _identity_roundtrip_model()
    assert M.reconstruction_loss(m, rng.normal(size=(5, 3)), rng.normal(size=(5, 3))) == pytest.approx(0, abs=1e-15)


def test_reconstruction_without_z_term(rng):
    m = cast_model(M.build(tiny_config(use_z_rec=False, seed=2)))
    v, z = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
    E, G = m.nets["E"], m.nets["G"]
    expected = np.mean(np.sum((v - np.asarray(G(E(v)))) ** 2, 1))
    assert M.reconstruction_loss(m, v, z) == pytest.approx(expected, rel=1e-12)


def test_reconstruction_matches_naive_recomputation(rng):
    m = cast_model(M.build(tiny_config(seed=6)))
    v, z = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
    E, G = m.nets["E"], m.nets["G"]
    rv = np.asarray(G(E(v)))
    rz = np.asarray(E(G(z)))
    expected = sum(((v[i, j] - rv[i, j]) ** 2 for i in range(4) for j in range(2))) / 4
    expected += sum(((z[i, j] - rz[i, j]) ** 2 for i in range(4) for j in range(3))) / 4
    assert M.reconstruction_loss(m, v, z) == pytest.approx(expected, rel=1e-12)


def test_supervised_losses_exact_outcome_fit(rng):
    m = cast_model(M.build(tiny_config()))
    F = m.nets["F"]
    x, z0, z1, z2 = (rng.normal(size=(5, 1)) for _ in range(4))
    y = np.asarray(F(np.concatenate([x, z0, z1], 1)))
    loss_f, _ = M.supervised_losses(m, x, y, z0, z1, z2)
    assert loss_f == 0.0


def test_supervised_binary_head_at_zero(rng):
    m = cast_model(M.build(tiny_config(treatment_kind="binary")))
    m.nets["H"] = _zero(m.nets["H"])
    x = rng.integers(0, 2, size=8).astype(float)
    z = rng.normal(size=(8, 1))
    _, loss_h = M.supervised_losses(m, x, np.zeros(8), z, z, z)
    assert loss_h == pytest.approx(0.25, abs=1e-15)


def test_supervised_matches_naive_recomputation(rng):
    m = cast_model(M.build(tiny_config(seed=8)))
    x, y, z0, z1, z2 = (rng.normal(size=4) for _ in range(5))
    F, H = m.nets["F"], m.nets["H"]
    lf = np.mean([(y[i] - float(F(np.array([[x[i], z0[i], z1[i]]]))[0, 0])) ** 2 for i in range(4)])
    lh = np.mean([(x[i] - float(H(np.array([[z0[i], z2[i]]]))[0, 0])) ** 2 for i in range(4)])
    got = M.supervised_losses(m, x, y, z0, z1, z2)
    assert got == pytest.approx((lf, lh), rel=1e-12)


def test_binary_head_outputs_in_unit_interval(rng):
    m = M.build(M.ModelConfig(p=4, partition=(3, 3, 6, 6), treatment_kind="binary"))
    out = np.asarray(m.nets["H"](rng.normal(scale=50, size=(200, 9))))
    assert np.all((out >= 0) & (out <= 1))


# --- train_step -------------------------------------------------------------------

def _step_inputs(cfg, seed=0):
    r = np.random.default_rng(seed)
    n = cfg.batch_size
    return (r.normal(size=(n, cfg.p)), r.normal(size=n), r.normal(size=n)), r.normal(size=(n, cfg.partition.q))


def test_zero_learning_rate_keeps_parameters_bit_identical():
    cfg = tiny_config(lr=0.0)
    m = M.build(cfg)
    before = {k: flat(v.params) for k, v in m.nets.items()}
    data, prior = _step_inputs(cfg)
    M.train_step(m, M.init_optimizers(m), data, prior)
    for k, v in m.nets.items():
        np.testing.assert_array_equal(flat(v.params), before[k])


def test_v_gan_off_removes_critic_and_term():
    cfg = tiny_config(use_v_gan=False)
    m = M.build(cfg)
    assert "Dv" not in m.nets
    data, prior = _step_inputs(cfg)
    _, rec = M.train_step(m, M.init_optimizers(m), data, prior)
    assert rec["gan_g"] == 0.0 and rec["gan_dv"] == 0.0
    with pytest.raises(ContractError):
        m.net("Dv")


@pytest.mark.parametrize("flag,term", [("use_v_gan", "gan_g"), ("use_z_rec", "rec_z")])
def test_flag_removes_exactly_its_term(flag, term):
    cfg = tiny_config(lr=0.0, seed=1)
    data, prior = _step_inputs(cfg, 3)
    m_on, m_off = M.build(cfg), M.build(cfg.replace(**{flag: False}))
    _, on = M.train_step(m_on, M.init_optimizers(m_on), data, prior, key=5)
    _, off = M.train_step(m_off, M.init_optimizers(m_off), data, prior, key=5)
    gen = ("gan_e", "gan_g", "rec_z", "rec_v", "mse_f", "mse_h")
    diff = sum(on[k] for k in gen) - sum(off[k] for k in gen)
    assert diff == pytest.approx(on[term], rel=1e-5, abs=1e-6)
    assert off[term] == 0.0


def test_generator_step_leaves_critics_alone():
    """With the critic optimizer frozen, a full step must not move critics."""
    cfg = tiny_config(seed=2)
    m = M.build(cfg)
    opt = M.init_optimizers(m)
    opt["critic"] = nn.AdamState(step=opt["critic"].step, m=opt["critic"].m, v=opt["critic"].v, lr=0.0)
    before = {k: flat(m.nets[k].params) for k in ("Dz", "Dv")}
    data, prior = _step_inputs(cfg)
    M.train_step(m, opt, data, prior)
    for k in before:
        np.testing.assert_array_equal(flat(m.nets[k].params), before[k])
    assert not np.array_equal(flat(m.nets["E"].params), flat(M.build(cfg).nets["E"].params))


def test_train_step_checks_batch_size():
    cfg = tiny_config()
    m = M.build(cfg)
    (v, x, y), z = _step_inputs(cfg)
    with pytest.raises(ShapeError):
        M.train_step(m, M.init_optimizers(m), (v[:3], x[:3], y[:3]), z[:3])


def test_non_finite_loss_raises_with_iteration():
    cfg = tiny_config()
    m = M.build(cfg)
    (v, x, y), z = _step_inputs(cfg)
    y[0] = np.inf
    with pytest.raises(TrainingError, match="iteration 0"):
        M.train_step(m, M.init_optimizers(m), (v, x, y), z)


# --- train --------------------------------------------------------------------------

def _toy(seed, n=400):
    r = np.random.default_rng(seed)
    v = r.normal(size=(n, 2))
    x = v[:, 0] + 0.5 * r.normal(size=n)
    y = x + v[:, 0] + 0.5 * r.normal(size=n)
    return Dataset(v, x, y)


def test_trace_length_and_finiteness():
    m = M.build(tiny_config())
    trace = M.train(m, _toy(0), iterations=10, chunk=4)
    assert len(trace) == 10
    assert np.all(np.isfinite(trace.as_array()))
    assert m.iterations_trained == 10


def test_same_seed_gives_identical_traces():
    a = M.train(M.build(tiny_config(seed=3)), _toy(1), iterations=20)
    b = M.train(M.build(tiny_config(seed=3)), _toy(1), iterations=20)
    np.testing.assert_array_equal(a.as_array(), b.as_array())


def test_outcome_loss_decreases_on_linear_toy():
    wins = 0
    for seed in range(10):
        cfg = M.ModelConfig(p=2, seed=seed, iterations=200)
        trace = M.train(M.build(cfg), _toy(seed))
        wins += trace.losses["mse_f"][-1] < trace.losses["mse_f"][0]
    assert wins >= 9


def test_train_rejects_mismatched_covariates():
    with pytest.raises(ShapeError):
        M.train(M.build(tiny_config(p=3)), _toy(0), iterations=1)
