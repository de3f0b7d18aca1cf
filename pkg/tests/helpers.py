"""Small shared builders for the test suite."""
import numpy as np

from speechprefix import numerics as nx
from speechprefix.audio import ConvStackConfig
from speechprefix.config import toy_profile
from speechprefix.encoder import assemble, cls_regression, encode, mlm_loss
from speechprefix.laa import laa_forward
from speechprefix.params import init_params

# PASS/FAIL lines from the acceptance suite, printed in the terminal summary
ACCEPTANCE_RESULTS: list = []


def tiny_model(**kw):
    base = dict(d=8, n_layers=1, n_heads=2, d_ff=12, vocab_size=11, max_positions=16, d_A=6,
                dropout_p=0.0, laa_dropout_p=0.0)
    base.update(kw)
    return toy_profile(**base)


def tiny_conv(d_A=6, seed=0):
    # 3 layers, receptive field 40, total stride 20
    return ConvStackConfig([(d_A, 10, 5), (d_A, 3, 2), (d_A, 2, 2)], seed)


def random_params(cfg, seed, dtype=np.float64, scale=0.3):
    """Wide-float parameters with every entry perturbed so no gradient is trivially zero."""
    params = init_params(cfg, tiny_conv(cfg.d_A, seed), seed, dtype=dtype)
    rng = np.random.default_rng([seed, 77])
    for pid, p in params.items():
        p.data = (p.data + scale * rng.standard_normal(p.shape)).astype(dtype)
    return params


def random_batch(cfg, seed, B=2, T=(4, 3), L=(6, 4)):
    """Frames, frame mask and [CLS] .. [SEP] token rows with right padding."""
    rng = np.random.default_rng([seed, 5])
    Tm, Lm = max(T), max(L)
    Z = rng.standard_normal((B, Tm, cfg.d_A))
    fmask = np.zeros((B, Tm), bool)
    tokens = np.zeros((B, Lm), np.int64)
    for b in range(B):
        fmask[b, :T[b]] = True
        tokens[b, 0] = 1
        tokens[b, 1:L[b] - 1] = rng.integers(5, cfg.vocab_size, L[b] - 2)
        tokens[b, L[b] - 1] = 2
    return Z, fmask, tokens


def mlm_objective(params, cfg, Z, fmask, tokens, rows, cols, targets):
    pp = laa_forward(Z, params, cfg, frame_mask=fmask)
    x = assemble(tokens, pp, params, cfg)
    return mlm_loss(encode(x, params, cfg), rows, cols, targets, params, cfg, x.lengths)


def regression_objective(params, cfg, Z, fmask, tokens, y):
    pp = laa_forward(Z, params, cfg, frame_mask=fmask)
    x = assemble(tokens, pp, params, cfg)
    pred = cls_regression(encode(x, params, cfg), params, cfg)
    return nx.mse_loss(pred, y)


# adding a constant to every key shifts all scores of a query equally, which
# softmax ignores: these gradients are exactly zero and relative error is noise
STRUCTURAL_ZERO = (".attn.k.b",)


def grad_errors(objective, params, pids, eps=1e-4):
    """Relative error per pid between backward() and central differences.

    Structurally-zero gradients are checked absolutely instead and reported
    as 0.0 when both routes agree they vanish.
    """
    with nx.Graph() as g:
        loss = objective()
    grads = nx.backward(g, loss, set(pids))
    num = nx.numerical_grad(lambda: float(objective().data), {pid: params[pid].data for pid in pids}, eps=eps)
    out = {}
    for pid in pids:
        if pid.endswith(STRUCTURAL_ZERO):
            both_zero = np.abs(grads[pid]).max() < 1e-12 and np.abs(num[pid]).max() < 1e-8
            out[pid] = 0.0 if both_zero else float("inf")
        else:
            out[pid] = nx.relative_error(grads[pid], num[pid])
    return out
