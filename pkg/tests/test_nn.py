"""Decoder stack contracts: causality, dense-reference oracle, Adam, gradcheck."""

import math

import numpy as np
import pytest

from bytesim import tensor as T
from bytesim.nn import (
    AdamState,
    adam_step,
    build_stack,
    causal_decoder_stack,
    finite_diff_gradcheck,
    init_adam,
    stack_param_count,
    zero_grads,
)


def small_stack(layers=1, hidden=4, heads=1, seed=0, dtype=np.float64):
    return build_stack("s", hidden, layers, heads, np.random.default_rng(seed), dtype)


def test_stack_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        build_stack("s", 6, 1, 4, np.random.default_rng(0))


def test_single_position_has_no_cross_mixing():
    stack = small_stack()
    x = np.random.default_rng(1).standard_normal((1, 4))
    out = causal_decoder_stack(T.Tensor(x), stack)
    assert out.shape == (1, 4)


def test_causality_is_bit_exact():
    stack = small_stack(layers=2, hidden=8, heads=2, seed=2)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 8))
    base = causal_decoder_stack(T.Tensor(x.copy()), stack).data.copy()
    for j in (3, 5):
        perturbed = x.copy()
        perturbed[j] += rng.standard_normal(8) * 10
        out = causal_decoder_stack(T.Tensor(perturbed), stack).data
        # positions before j unchanged to the last bit; j itself must move
        assert (out[:j] == base[:j]).all()
        assert not np.allclose(out[j], base[j])


def _dense_reference(x, stack):
    """Scalar-loop forward of a 1-layer 1-head stack: the independent oracle."""
    (block,) = stack.blocks
    L, H = x.shape

    def ln(row, g, b):
        mu = sum(row) / H
        var = sum((v - mu) ** 2 for v in row) / H
        return [(v - mu) / math.sqrt(var + 1e-5) * g[j] + b[j] for j, v in enumerate(row)]

    def linear(row, w, b):
        return [sum(row[i] * w[i, j] for i in range(len(row))) + b[j] for j in range(w.shape[1])]

    out = [list(map(float, x[i])) for i in range(L)]
    # attention sublayer
    normed = [ln(out[i], block.ln1_g.data, block.ln1_b.data) for i in range(L)]
    q = [linear(r, block.wq.data, block.bq.data) for r in normed]
    k = [linear(r, block.wk.data, block.bk.data) for r in normed]
    v = [linear(r, block.wv.data, block.bv.data) for r in normed]
    for i in range(L):
        scores = [
            sum(q[i][d] * k[j][d] for d in range(H)) / math.sqrt(H) for j in range(i + 1)
        ]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        z = sum(w)
        mixed = [sum(w[j] / z * v[j][d] for j in range(i + 1)) for d in range(H)]
        proj = linear(mixed, block.wo.data, block.bo.data)
        out[i] = [out[i][d] + proj[d] for d in range(H)]
    # feed-forward sublayer
    for i in range(L):
        normed_i = ln(out[i], block.ln2_g.data, block.ln2_b.data)
        hidden = linear(normed_i, block.w_ff1.data, block.b_ff1.data)
        c = math.sqrt(2 / math.pi)
        acted = [0.5 * h * (1 + math.tanh(c * (h + 0.044715 * h**3))) for h in hidden]
        back = linear(acted, block.w_ff2.data, block.b_ff2.data)
        out[i] = [out[i][d] + back[d] for d in range(H)]
    return np.array([ln(r, stack.final_g.data, stack.final_b.data) for r in out])


def test_stack_matches_scalar_loop_reference():
    stack = small_stack(layers=1, hidden=4, heads=1, seed=5)
    x = np.random.default_rng(6).standard_normal((5, 4))
    got = causal_decoder_stack(T.Tensor(x), stack).data
    want = _dense_reference(x, stack)
    assert np.max(np.abs(got - want)) < 1e-5


def test_stack_gradcheck():
    stack = small_stack(layers=2, hidden=4, heads=2, seed=7)
    x = np.random.default_rng(8).standard_normal((3, 4))

    def loss():
        out = causal_decoder_stack(T.Tensor(x), stack)
        return T.sum_all(out * out)

    assert finite_diff_gradcheck(loss, stack.parameters(), probes=60, h=1e-5, seed=1) < 1e-6


def test_stack_param_count_formula():
    stack = small_stack(layers=3, hidden=8, heads=2)
    assert sum(p.size for p in stack.parameters()) == stack_param_count(8, 3)


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_unchanged():
    p = T.Parameter("p", np.array([1.0, -2.0]))
    states = init_adam([p])
    adam_step([p], states, lr=0.1)
    assert np.allclose(p.data, [1.0, -2.0])


def test_adam_first_step_is_bias_corrected_unit_step():
    p = T.Parameter("p", np.array([0.0]))
    p.grad[:] = 1.0
    states = init_adam([p])
    adam_step([p], states, lr=0.1)
    # mhat = 1, vhat = 1 -> step = -lr / (1 + eps)
    assert abs(p.data[0] + 0.1) < 1e-7


def test_adam_three_steps_match_hand_iterated_recurrence():
    # minimize f(w) = 0.5 w^2 from w=1; grad = w
    p = T.Parameter("p", np.array([1.0]))
    states = init_adam([p])
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8

    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 4):
        g = w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w -= lr * mhat / (math.sqrt(vhat) + eps)

        p.grad[:] = p.data  # gradient of the quadratic at the current point
        adam_step([p], states, lr, b1, b2, eps)
    assert abs(p.data[0] - w) < 1e-8


def test_adam_requires_gradients():
    p = T.Parameter("p", np.array([1.0]))
    states = init_adam([p])
    p.grad = None
    with pytest.raises(ValueError):
        adam_step([p], states, lr=0.1)


def test_adam_step_counter_increases():
    p = T.Parameter("p", np.array([1.0]))
    states = init_adam([p])
    for expected in (1, 2, 3):
        adam_step([p], states, lr=0.01)
        assert states["p"].step == expected


# -- gradcheck plumbing -----------------------------------------------------------


def test_gradcheck_linear_loss_is_exact():
    w = T.Parameter("w", np.array([1.0, 2.0, 3.0]))
    x = T.Tensor(np.array([0.5, -1.0, 2.0]))
    err = finite_diff_gradcheck(lambda: T.sum_all(w * x), [w], probes=9, h=1e-4, seed=0)
    assert err < 1e-9


def test_gradcheck_rejects_empty_parameter_set():
    with pytest.raises(ValueError):
        finite_diff_gradcheck(lambda: T.Tensor(np.array(0.0)), [], probes=5)


def test_gradcheck_rejects_non_finite_loss():
    p = T.Parameter("p", np.array([1.0]))
    with pytest.raises(FloatingPointError):
        finite_diff_gradcheck(lambda: T.Tensor(np.array(np.nan)) * p, [p], probes=2)
