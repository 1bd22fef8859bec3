"""Decoder blocks, Adam, and finite-difference gradient checking.

The decoder stack is the standard pre-norm causal transformer: each block is
`x + attn(ln(x))` then `x + ffn(ln(x))` with a 4x gelu feed-forward, followed
by one final layer norm. Weights draw from N(0, 0.02^2), biases start at zero.
Attention masks are strictly causal, so position i is bit-identical under any
change to inputs at positions > i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    affine,
    causal_attention,
    gelu,
    layer_norm,
    reshape,
)


def init_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


def init_zeros(shape, dtype=np.float32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def init_ones(shape, dtype=np.float32) -> np.ndarray:
    return np.ones(shape, dtype=dtype)


@dataclass
class BlockParams:
    ln1_g: Parameter
    ln1_b: Parameter
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    ln2_g: Parameter
    ln2_b: Parameter
    w_ff1: Parameter
    b_ff1: Parameter
    w_ff2: Parameter
    b_ff2: Parameter

    def parameters(self):
        return [getattr(self, f.name) for f in self.__dataclass_fields__.values()]


@dataclass
class StackParams:
    """One causal decoder stack: `layers` pre-norm blocks plus a final norm."""

    hidden: int
    heads: int
    blocks: list[BlockParams]
    final_g: Parameter
    final_b: Parameter

    def parameters(self):
        out = []
        for b in self.blocks:
            out.extend(b.parameters())
        out.extend([self.final_g, self.final_b])
        return out


def build_stack(
    prefix: str, hidden: int, layers: int, heads: int, rng: np.random.Generator, dtype=np.float32
) -> StackParams:
    if hidden % heads != 0:
        raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
    blocks = []
    for i in range(layers):
        p = f"{prefix}.block{i}"
        blocks.append(
            BlockParams(
                ln1_g=Parameter(f"{p}.ln1.gain", init_ones(hidden, dtype)),
                ln1_b=Parameter(f"{p}.ln1.bias", init_zeros(hidden, dtype)),
                wq=Parameter(f"{p}.attn.wq", init_normal(rng, (hidden, hidden), dtype=dtype)),
                bq=Parameter(f"{p}.attn.bq", init_zeros(hidden, dtype)),
                wk=Parameter(f"{p}.attn.wk", init_normal(rng, (hidden, hidden), dtype=dtype)),
                bk=Parameter(f"{p}.attn.bk", init_zeros(hidden, dtype)),
                wv=Parameter(f"{p}.attn.wv", init_normal(rng, (hidden, hidden), dtype=dtype)),
                bv=Parameter(f"{p}.attn.bv", init_zeros(hidden, dtype)),
                wo=Parameter(f"{p}.attn.wo", init_normal(rng, (hidden, hidden), dtype=dtype)),
                bo=Parameter(f"{p}.attn.bo", init_zeros(hidden, dtype)),
                ln2_g=Parameter(f"{p}.ln2.gain", init_ones(hidden, dtype)),
                ln2_b=Parameter(f"{p}.ln2.bias", init_zeros(hidden, dtype)),
                w_ff1=Parameter(f"{p}.ffn.w1", init_normal(rng, (hidden, 4 * hidden), dtype=dtype)),
                b_ff1=Parameter(f"{p}.ffn.b1", init_zeros(4 * hidden, dtype)),
                w_ff2=Parameter(f"{p}.ffn.w2", init_normal(rng, (4 * hidden, hidden), dtype=dtype)),
                b_ff2=Parameter(f"{p}.ffn.b2", init_zeros(hidden, dtype)),
            )
        )
    return StackParams(
        hidden=hidden,
        heads=heads,
        blocks=blocks,
        final_g=Parameter(f"{prefix}.final.gain", init_ones(hidden, dtype)),
        final_b=Parameter(f"{prefix}.final.bias", init_zeros(hidden, dtype)),
    )


def stack_param_count(hidden: int, layers: int) -> int:
    """Exact scalar count of build_stack output, independent of allocation."""
    per_block = (
        2 * hidden  # ln1
        + 4 * (hidden * hidden + hidden)  # q, k, v, o
        + 2 * hidden  # ln2
        + hidden * 4 * hidden + 4 * hidden  # ffn in
        + 4 * hidden * hidden + hidden  # ffn out
    )
    return layers * per_block + 2 * hidden


def _attention(x: Tensor, p: BlockParams, heads: int) -> Tensor:
    """Multi-head causal self-attention over x (B, L, H)."""
    return causal_attention(
        x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, heads
    )


def causal_decoder_stack(x: Tensor, stack: StackParams) -> Tensor:
    """Run the stack over x of shape (L, H) or (B, L, H); same shape out."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + tuple(x.shape))
    if x.shape[-1] != stack.hidden:
        raise ValueError(f"input width {x.shape[-1]} != stack hidden {stack.hidden}")
    for block in stack.blocks:
        x = x + _attention(layer_norm(x, block.ln1_g, block.ln1_b), block, stack.heads)
        h = affine(layer_norm(x, block.ln2_g, block.ln2_b), block.w_ff1, block.b_ff1)
        x = x + affine(gelu(h), block.w_ff2, block.b_ff2)
    x = layer_norm(x, stack.final_g, stack.final_b)
    if squeeze:
        x = reshape(x, tuple(x.shape)[1:])
    return x


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers and step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, p: Parameter) -> "AdamState":
        return cls(m=np.zeros_like(p.data), v=np.zeros_like(p.data))


def init_adam(params: list[Parameter]) -> dict[str, AdamState]:
    states = {}
    for p in params:
        if p.name in states:
            raise ValueError(f"duplicate parameter name {p.name}")
        states[p.name] = AdamState.for_param(p)
    return states


def adam_step(
    params: list[Parameter],
    states: dict[str, AdamState],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard bias-corrected Adam update, in place."""
    for p in params:
        if p.grad is None:
            raise ValueError(f"missing gradient for {p.name}")
        st = states[p.name]
        st.step += 1
        g = p.grad
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        st.v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(st.v / (1.0 - beta2**st.step))
        denom += eps
        update = st.m / denom
        update *= lr / (1.0 - beta1**st.step)
        p.data -= update


def zero_grads(params: list[Parameter]):
    for p in params:
        p.zero_grad()


# -- gradient checking ---------------------------------------------------------


def finite_diff_gradcheck(
    loss_fn,
    params: list[Parameter],
    probes: int = 200,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    Probes random coordinates across all parameters. Meant to run with the
    model built in float64; h=1e-4 leaves ~8 digits of agreement there.
    Relative error is |analytic - numeric| / max(1, |analytic|).
    """
    total = sum(p.data.size for p in params)
    if total == 0:
        raise ValueError("no parameter coordinates to probe")
    zero_grads(params)
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise FloatingPointError("loss is not finite")
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in rng.integers(0, total, size=probes):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[pi - 1] if pi else 0))
        p = params[pi]
        view = p.data.reshape(-1)
        keep = view[offset]
        view[offset] = keep + h
        up = float(loss_fn().data)
        view[offset] = keep - h
        down = float(loss_fn().data)
        view[offset] = keep
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError("loss is not finite under perturbation")
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[p.name].reshape(-1)[offset])
        rel = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, rel)
    return worst
