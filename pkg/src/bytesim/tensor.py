"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an ndarray and, while gradients are enabled, remembers how it
was produced so that `backward()` can push adjoints down the graph. The op set
is deliberately small: exactly what a decoder-only patch/byte model needs
(affine maps, batched matmul for attention, layer norm, gelu, softmax,
embedding gathers, slicing/concat, reductions, and a fused masked
cross-entropy measured in bits).

Everything is single-threaded numpy, so identical inputs give bit-identical
outputs. Training runs in float32; gradient checking builds the whole model in
float64 (numpy promotes nothing silently here because all ops preserve the
dtype of their inputs).
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

LOG2E = 1.0 / math.log(2.0)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation/generation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array plus an optional backward edge into the graph.

    data: row-major ndarray (float32 by default, float64 in gradcheck mode)
    grad: accumulated adjoint, allocated lazily with the same shape/dtype
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._grad_owned = False

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph plumbing -----------------------------------------------------

    def _accumulate(self, grad: np.ndarray):
        # First contribution aliases the incoming array (backwards hand over
        # temporaries); a second contribution forces a fresh owned buffer, so
        # aliased memory is never mutated in place.
        if self.grad is None:
            self.grad = grad
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += grad
        else:
            self.grad = self.grad + grad
            self._grad_owned = True

    def backward(self):
        """Reverse sweep from a scalar output; accumulates into leaf .grad."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node is not self and node._parents:
                node.grad = None  # free interior adjoints as we go

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __truediv__(self, c: float):
        return mul(self, 1.0 / c)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """A named leaf tensor; grad is always allocated and starts at zero."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self._grad_owned = True

    def zero_grad(self):
        if self.grad is None or not self._grad_owned:
            self.grad = np.zeros_like(self.data)
            self._grad_owned = True
        else:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Create an op result; drops the tape if grads are off or nothing needs them."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint over the axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def assert_finite(t: Tensor, what: str = "tensor"):
    """NaN/Inf anywhere is an error state for this module."""
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):  # scalar fast path, kept off the tape
        a = _wrap(a)
        return _node(a.data + b, (a,), lambda g: a._accumulate(g))
    a = _wrap(a)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _wrap(a)
        return _node(a.data * b, (a,), lambda g: a._accumulate(g * b))
    a = _wrap(a)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (..., n, k) @ b (..., k, m); batch dims must match exactly or be absent."""
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., in) @ w (in, out) + b, flattened to one GEMM."""
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    data = out.reshape(*lead, w.data.shape[1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape))

    parents = (x, w) if b is None else (x, w, b)
    return _node(data, parents, backward)


# -- shape ops ---------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.data.shape))

    return _node(data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(np.transpose(g, inverse))

    return _node(data, (x,), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        x._accumulate(full)

    return _node(data, (x,), backward)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return _node(data, tuple(tensors), backward)


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast view to `shape`; backward sums over the expanded axes."""
    data = np.broadcast_to(x.data, shape)

    def backward(g):
        x._accumulate(_unbroadcast(g, x.data.shape))

    return _node(data, (x,), backward)


def mean(x: Tensor, axis: int) -> Tensor:
    data = x.data.mean(axis=axis)
    n = x.data.shape[axis]

    def backward(g):
        x._accumulate(np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _node(data, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _node(data, (x,), backward)


# -- gathers -----------------------------------------------------------------


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """table (V, H) gathered at idx (...,) -> (..., H)."""
    idx = np.asarray(idx)
    data = table.data[idx]

    def backward(g):
        if table.grad is None or not table._grad_owned:
            base = table.grad
            table.grad = np.zeros_like(table.data) if base is None else base.copy()
            table._grad_owned = True
        np.add.at(table.grad, idx, g)

    return _node(data, (table,), backward)


def gather_rows_sum(table: Tensor, idx: np.ndarray) -> Tensor:
    """Sum of table rows per group: table (R, H), idx (..., S) -> (..., H).

    This is the one-hot-times-matrix product without materializing one-hots:
    out[p] = sum_j table[idx[p, j]].
    """
    idx = np.asarray(idx)
    data = table.data[idx].sum(axis=-2)

    def backward(g):
        if table.grad is None or not table._grad_owned:
            base = table.grad
            table.grad = np.zeros_like(table.data) if base is None else base.copy()
            table._grad_owned = True
        np.add.at(table.grad, idx, np.expand_dims(g, -2))

    return _node(data, (table,), backward)


# -- nonlinearities ----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-form gelu; the derivative below is exact for this form.

    Written with explicit in-place passes: these arrays are the largest in
    the model (rows x 4H) and naive temporaries dominate the step time.
    """
    xd = x.data
    x2 = xd * xd
    t = x2 * np.asarray(_GELU_C * 0.044715, dtype=xd.dtype)
    t += np.asarray(_GELU_C, dtype=xd.dtype)
    t *= xd  # t = C*x + C*a*x^3
    np.tanh(t, out=t)
    data = t + 1.0
    data *= xd
    data *= 0.5

    def backward(g):
        di = x2
        di *= np.asarray(3.0 * 0.044715 * _GELU_C, dtype=xd.dtype)
        di += np.asarray(_GELU_C, dtype=xd.dtype)
        u = t * t
        np.subtract(1.0, u, out=u)
        u *= di
        u *= xd
        u += t
        u += 1.0
        u *= 0.5
        u *= g
        x._accumulate(u)

    return _node(data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * probs).sum(axis=axis, keepdims=True)
        x._accumulate(probs * (g - dot))

    return _node(probs, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    x (..., H); gain, bias (H,). A constant row maps to pure bias (the eps
    floor keeps the zero-variance case finite).
    """
    if x.data.shape[-1] < 1:
        raise ValueError("layer_norm requires at least one feature per row")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = centered * rstd
    data = xhat * gain.data + bias.data

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(rstd * (dxhat - m1 - xhat * m2))

    return _node(data, (x, gain, bias), backward)


# -- losses ------------------------------------------------------------------


def causal_attention(
    x: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    heads: int,
) -> Tensor:
    """Multi-head causal self-attention over x (B, L, H), as one fused op.

    The QKV projections run as a single GEMM and the whole backward is
    hand-written; masked (future) positions get probability exactly zero, so
    outputs at position i are bit-identical under any change to rows > i.
    """
    bsz, length, hidden = x.data.shape
    dh = hidden // heads
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=x.data.dtype)
    x2 = np.ascontiguousarray(x.data.reshape(-1, hidden))
    w_cat = np.concatenate([wq.data, wk.data, wv.data], axis=1)
    b_cat = np.concatenate([bq.data, bk.data, bv.data])
    qkv = x2 @ w_cat
    qkv += b_cat
    # (B*L, 3H) -> 3 x (B, heads, L, dh)
    qkv4 = qkv.reshape(bsz, length, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv4[0], qkv4[1], qkv4[2]
    scores = (q * scale) @ k.swapaxes(-1, -2)
    tri = np.triu_indices(length, k=1)
    scores[:, :, tri[0], tri[1]] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores[:, :, tri[0], tri[1]] = 0.0  # exact zeros above the diagonal
    scores /= scores.sum(axis=-1, keepdims=True)
    probs = scores
    mixed = probs @ v  # (B, heads, L, dh)
    mixed2 = np.ascontiguousarray(mixed.transpose(0, 2, 1, 3)).reshape(-1, hidden)
    out = mixed2 @ wo.data
    out += bo.data
    data = out.reshape(bsz, length, hidden)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, hidden))
        if wo.requires_grad:
            wo._accumulate(mixed2.T @ g2)
        if bo.requires_grad:
            bo._accumulate(g2.sum(axis=0))
        gm = (g2 @ wo.data.T).reshape(bsz, length, heads, dh).transpose(0, 2, 1, 3)
        g_probs = gm @ v.swapaxes(-1, -2)
        g_scores = probs * (g_probs - (g_probs * probs).sum(axis=-1, keepdims=True))
        g_q = (g_scores @ k) * scale
        g_k = g_scores.swapaxes(-1, -2) @ (q * scale)
        g_v = probs.swapaxes(-1, -2) @ gm
        g_qkv = np.empty((bsz, length, 3, heads, dh), dtype=g2.dtype)
        g_qkv[:, :, 0] = g_q.transpose(0, 2, 1, 3)
        g_qkv[:, :, 1] = g_k.transpose(0, 2, 1, 3)
        g_qkv[:, :, 2] = g_v.transpose(0, 2, 1, 3)
        g_qkv2 = g_qkv.reshape(-1, 3 * hidden)
        if wq.requires_grad:
            gw = x2.T @ g_qkv2
            wq._accumulate(gw[:, :hidden])
            wk._accumulate(gw[:, hidden : 2 * hidden])
            wv._accumulate(gw[:, 2 * hidden :])
        if bq.requires_grad:
            gb = g_qkv2.sum(axis=0)
            bq._accumulate(gb[:hidden])
            bk._accumulate(gb[hidden : 2 * hidden])
            bv._accumulate(gb[2 * hidden :])
        if x.requires_grad:
            x._accumulate((g_qkv2 @ w_cat.T).reshape(x.data.shape))

    return _node(data, (x, wq, bq, wk, bk, wv, bv, wo, bo), backward)


def cross_entropy_bits_masked(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Total -log2 softmax(logits)[target] over masked positions.

    logits (P, V); targets (P,) ints in [0, V); mask (P,) bool. Returns a
    scalar Tensor of summed bits. Positions with mask False contribute nothing
    to value or gradient.
    """
    targets = np.asarray(targets).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    ld = logits.data
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= ld.shape[-1]:
        raise ValueError("target symbol out of range")
    m = ld.max(axis=-1, keepdims=True)
    shifted = ld - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[:, 0]
    nll_nats = lse - ld[np.arange(ld.shape[0]), targets]
    data = np.asarray((nll_nats * mask).sum() * LOG2E, dtype=ld.dtype)

    def backward(g):
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        probs[np.arange(ld.shape[0]), targets] -= 1.0
        probs *= (mask * float(g) * LOG2E)[:, None]
        logits._accumulate(probs)

    return _node(data, (logits,), backward)


def cross_entropy_bits(logits: Tensor, target: int) -> Tensor:
    """Bits of surprisal, -log2 softmax(logits)[target], for one position."""
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy_bits expects a single logit vector")
    if not 0 <= int(target) < logits.data.shape[0]:
        raise ValueError(f"target {target} out of range for vocab {logits.data.shape[0]}")
    flat = reshape(logits, (1, -1))
    return cross_entropy_bits_masked(flat, np.array([int(target)]), np.array([True]))
