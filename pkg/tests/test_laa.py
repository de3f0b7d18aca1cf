import numpy as np
import pytest

from speechprefix import numerics as nx
from speechprefix.audio import FrameSequence
from speechprefix.errors import ShapeError
from speechprefix.laa import attention_profile, laa_forward
from speechprefix.params import init_params

from helpers import grad_errors, mlm_objective, random_batch, random_params, tiny_conv, tiny_model


def _params(cfg, seed=0, dtype=np.float64):
    return random_params(cfg, seed, dtype)


@pytest.mark.parametrize("T", [1, 5, 49, 300])
def test_two_prefixes_for_any_length(T):
    cfg = tiny_model()
    pp = laa_forward(np.random.default_rng(T).normal(size=(T, cfg.d_A)), _params(cfg), cfg)
    assert pp.vectors.shape == (1, 2, cfg.d)
    a1, a2 = attention_profile(pp)
    assert a1.shape == a2.shape == (T,)
    for a in (a1, a2):
        assert abs(a.sum() - 1.0) < 1e-6 and (a >= 0).all() and (a <= 1).all()


def test_single_frame_is_gru_output():
    cfg = tiny_model()
    params = _params(cfg)
    Z = np.random.default_rng(0).normal(size=(1, cfg.d_A))
    pp = laa_forward(Z, params, cfg)
    a1, a2 = attention_profile(pp)
    np.testing.assert_array_equal(a1, [1.0])
    np.testing.assert_array_equal(a2, [1.0])
    x = nx.linear(nx.layer_norm(Z[None], params["laa.ln.gamma"], params["laa.ln.beta"]),
                  params["laa.proj.W"], params["laa.proj.b"])
    m = np.ones((1, 1), bool)
    for k, direction in enumerate(("gru_fwd", "gru_bwd")):
        phi = nx.gru(x, m, *(params[f"laa.{direction}.{n}"] for n in ("W_ih", "W_hh", "b_ih", "b_hh")),
                     reverse=k == 1)
        np.testing.assert_allclose(pp.vectors.data[0, k], phi.data[0, 0], atol=1e-12)


def test_constant_sequence_gives_uniform_weights():
    cfg = tiny_model()
    params = _params(cfg)
    # zero GRU recurrence: every step sees the same input and so the same state
    for d in ("gru_fwd", "gru_bwd"):
        params[f"laa.{d}.W_hh"].data[:] = 0.0
        params[f"laa.{d}.b_hh"].data[:] = 0.0
    for name in ("W_ih", "b_ih"):
        # update gate fully open so h_t = n_t regardless of h_{t-1}
        for d in ("gru_fwd", "gru_bwd"):
            H = cfg.d
            params[f"laa.{d}.{name}"].data[..., H:2 * H] = -50.0 if name == "b_ih" else 0.0
    Z = np.tile(np.random.default_rng(0).normal(size=(1, cfg.d_A)), (7, 1))
    a1, a2 = attention_profile(laa_forward(Z, params, cfg))
    np.testing.assert_allclose(a1, np.full(7, 1 / 7), atol=1e-9)
    np.testing.assert_allclose(a2, np.full(7, 1 / 7), atol=1e-9)


def test_convex_combination():
    cfg = tiny_model()
    params = _params(cfg)
    Z = np.random.default_rng(4).normal(size=(9, cfg.d_A))
    pp = laa_forward(Z, params, cfg)
    x = nx.linear(nx.layer_norm(Z[None], params["laa.ln.gamma"], params["laa.ln.beta"]),
                  params["laa.proj.W"], params["laa.proj.b"])
    m = np.ones((1, 9), bool)
    for k, d in enumerate(("gru_fwd", "gru_bwd")):
        phi = nx.gru(x, m, *(params[f"laa.{d}.{n}"] for n in ("W_ih", "W_hh", "b_ih", "b_hh")),
                     reverse=k == 1).data[0]
        alpha = pp.alphas[0, k]
        np.testing.assert_allclose(alpha @ phi, pp.vectors.data[0, k], atol=1e-12)
        assert (pp.vectors.data[0, k] <= phi.max(0) + 1e-12).all()
        assert (pp.vectors.data[0, k] >= phi.min(0) - 1e-12).all()


def test_order_aware():
    cfg = tiny_model()
    params = _params(cfg)
    Z = np.random.default_rng(5).normal(size=(6, cfg.d_A))
    a = laa_forward(Z, params, cfg).vectors.data
    b = laa_forward(Z[::-1].copy(), params, cfg).vectors.data
    assert not np.allclose(a, b)


def test_padding_invariance():
    cfg = tiny_model()
    params = _params(cfg)
    Z = np.random.default_rng(6).normal(size=(4, cfg.d_A))
    alone = laa_forward(Z, params, cfg)
    padded = np.concatenate([Z, np.full((3, cfg.d_A), 7.0)])[None]
    mask = np.array([[True] * 4 + [False] * 3])
    batched = laa_forward(padded, params, cfg, frame_mask=mask)
    np.testing.assert_allclose(batched.vectors.data, alone.vectors.data, atol=1e-12)
    assert (batched.alphas[0, :, 4:] == 0).all()


def test_dropout_off_train_equals_eval():
    cfg = tiny_model(laa_dropout_p=0.0)
    params = _params(cfg)
    Z = np.random.default_rng(7).normal(size=(5, cfg.d_A))
    a = laa_forward(Z, params, cfg, training=True, rng=np.random.default_rng(0)).vectors.data
    b = laa_forward(Z, params, cfg, training=False).vectors.data
    assert a.tobytes() == b.tobytes()


def test_dropout_on_changes_training_output():
    cfg = tiny_model(laa_dropout_p=0.5)
    params = _params(cfg)
    Z = np.random.default_rng(7).normal(size=(5, cfg.d_A))
    a = laa_forward(Z, params, cfg, training=True, rng=np.random.default_rng(0)).vectors.data
    b = laa_forward(Z, params, cfg, training=False).vectors.data
    assert not np.allclose(a, b)


def test_frame_sequence_input():
    cfg = tiny_model()
    Z = np.random.default_rng(8).normal(size=(3, cfg.d_A))
    params = _params(cfg)
    a = laa_forward(FrameSequence(Z, 320), params, cfg).vectors.data
    np.testing.assert_array_equal(a, laa_forward(Z, params, cfg).vectors.data)


def test_errors():
    cfg = tiny_model()
    params = _params(cfg)
    with pytest.raises(ShapeError):
        laa_forward(np.zeros((1, 0, cfg.d_A)), params, cfg)
    with pytest.raises(ShapeError):
        laa_forward(np.zeros((3, cfg.d_A + 1)), params, cfg)
    with pytest.raises(ShapeError):
        laa_forward(np.zeros((2, 3, cfg.d_A)), params, cfg, frame_mask=np.zeros((2, 3), bool))


def test_activation_switch():
    cfg_g, cfg_t = tiny_model(), tiny_model(laa_activation="tanh")
    params = _params(cfg_g)
    Z = np.random.default_rng(9).normal(size=(5, cfg_g.d_A))
    assert not np.allclose(laa_forward(Z, params, cfg_g).alphas, laa_forward(Z, params, cfg_t).alphas)


@pytest.mark.parametrize("seed", range(3))
def test_mlm_gradient_reaches_every_laa_entry(seed):
    cfg = tiny_model()
    params = _params(cfg, seed)
    Z, fm, tok = random_batch(cfg, seed)
    rows, cols, targets = np.array([0, 0, 1]), np.array([3, 5, 4]), np.array([5, 7, 9])
    pids = params.ids("theta_A")
    errs = grad_errors(lambda: mlm_objective(params, cfg, Z, fm, tok, rows, cols, targets), params, pids)
    assert max(errs.values()) < 1e-4, errs


def test_init_bounds():
    cfg = tiny_model()
    params = init_params(cfg, tiny_conv(cfg.d_A), seed=0)
    bound = 1 / np.sqrt(cfg.d)
    assert np.abs(params["laa.gru_fwd.W_hh"].data).max() <= bound
    bound = 1 / np.sqrt(cfg.d_A)
    assert np.abs(params["laa.proj.W"].data).max() <= bound
