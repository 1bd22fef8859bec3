"""Patch-hierarchical next-byte model.

Two causal stacks joined by a bottleneck: a patch-level decoder turns the
sequence of patch embeddings into one predicted feature per patch, and a
byte-level decoder expands each predicted feature back into the patch's
symbols, one 257-way softmax at a time.

Layout of a forward pass over symbols (B, N, S):

  one-hot(symbols) @ W_linear            -> E        (B, N, H)
  [start] ++ (E + pos)[:, :-1] -> stack  -> features (B, N, H)   shifted, so
                                                     feature i never sees
                                                     patches >= i
  [proj(feature)] ++ emb(prefix) -> stack -> logits  (B, N, S, 257)

Training and evaluation differ only in which positions the loss mask counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import patches as pc
from .nn import (
    StackParams,
    build_stack,
    causal_decoder_stack,
    init_normal,
    init_zeros,
    stack_param_count,
)
from .tensor import (
    Parameter,
    Tensor,
    affine,
    concat,
    cross_entropy_bits_masked,
    embedding,
    expand,
    gather_rows_sum,
    mean,
    no_grad,
    reshape,
    slice_axis,
    softmax,
)

VOCAB = pc.VOCAB


@dataclass
class ModelConfig:
    """Defaults are the reference scale; see desk_config() for a trainable one."""

    patch_size: int = 16
    max_patches: int = 512
    patch_layers: int = 12
    byte_layers: int = 3
    hidden: int = 768
    patch_heads: int = 12
    byte_heads: int = 12
    class_count: int | None = None

    def __post_init__(self):
        if self.patch_size < 1 or self.max_patches < 1:
            raise ValueError("patch_size and max_patches must be >= 1")
        if self.hidden % self.patch_heads or self.hidden % self.byte_heads:
            raise ValueError("hidden size must be divisible by head counts")

    @property
    def capacity_bytes(self) -> int:
        return self.patch_size * self.max_patches

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "max_patches": self.max_patches,
            "patch_layers": self.patch_layers,
            "byte_layers": self.byte_layers,
            "hidden": self.hidden,
            "patch_heads": self.patch_heads,
            "byte_heads": self.byte_heads,
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def desk_config(class_count: int | None = None) -> ModelConfig:
    """Small configuration that trains in minutes on a laptop CPU."""
    return ModelConfig(
        patch_size=16,
        max_patches=128,
        patch_layers=4,
        byte_layers=2,
        hidden=128,
        patch_heads=4,
        byte_heads=4,
        class_count=class_count,
    )


@dataclass
class ModelParams:
    config: ModelConfig
    w_linear: Parameter  # (S*257, H) flattened one-hot projection
    b_linear: Parameter  # (H,)
    patch_pos: Parameter  # (max_patches, H)
    start_patch: Parameter  # (H,) stands in for "everything before patch 1"
    byte_emb: Parameter  # (257, H)
    byte_pos: Parameter  # (S+1, H) slot 0 is the feature position
    feat_w: Parameter  # (H, H) projects a patch feature into the byte stack
    feat_b: Parameter  # (H,)
    patch_stack: StackParams
    byte_stack: StackParams
    head_w: Parameter  # (H, 257)
    head_b: Parameter  # (257,)
    cls_w: Parameter | None = None  # (H, K)
    cls_b: Parameter | None = None  # (K,)

    def parameters(self) -> list[Parameter]:
        out = [
            self.w_linear,
            self.b_linear,
            self.patch_pos,
            self.start_patch,
            self.byte_emb,
            self.byte_pos,
            self.feat_w,
            self.feat_b,
        ]
        out.extend(self.patch_stack.parameters())
        out.extend(self.byte_stack.parameters())
        out.extend([self.head_w, self.head_b])
        if self.cls_w is not None:
            out.extend([self.cls_w, self.cls_b])
        return out

    @property
    def dtype(self):
        return self.w_linear.data.dtype


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """All weights N(0, 0.02^2), biases and norm offsets zero; fixed draw order."""
    rng = np.random.default_rng(seed)
    s, h = config.patch_size, config.hidden
    params = ModelParams(
        config=config,
        w_linear=Parameter("embed.w_linear", init_normal(rng, (s * VOCAB, h), dtype=dtype)),
        b_linear=Parameter("embed.b_linear", init_zeros(h, dtype)),
        patch_pos=Parameter("embed.patch_pos", init_normal(rng, (config.max_patches, h), dtype=dtype)),
        start_patch=Parameter("embed.start_patch", init_normal(rng, (h,), dtype=dtype)),
        byte_emb=Parameter("embed.byte_emb", init_normal(rng, (VOCAB, h), dtype=dtype)),
        byte_pos=Parameter("embed.byte_pos", init_normal(rng, (s + 1, h), dtype=dtype)),
        feat_w=Parameter("bridge.feat_w", init_normal(rng, (h, h), dtype=dtype)),
        feat_b=Parameter("bridge.feat_b", init_zeros(h, dtype)),
        patch_stack=build_stack("patch", h, config.patch_layers, config.patch_heads, rng, dtype),
        byte_stack=build_stack("byte", h, config.byte_layers, config.byte_heads, rng, dtype),
        head_w=Parameter("head.w", init_normal(rng, (h, VOCAB), dtype=dtype)),
        head_b=Parameter("head.b", init_zeros(VOCAB, dtype)),
    )
    if config.class_count is not None:
        if config.class_count < 2:
            raise ValueError("class_count must be >= 2")
        params.cls_w = Parameter("cls.w", init_normal(rng, (h, config.class_count), dtype=dtype))
        params.cls_b = Parameter("cls.b", init_zeros(config.class_count, dtype))
    return params


def param_count(config: ModelConfig) -> int:
    """Exact scalar parameter count for a config, by closed-form summation."""
    s, h = config.patch_size, config.hidden
    n = s * VOCAB * h + h  # projection
    n += config.max_patches * h + h  # patch positions + start patch
    n += VOCAB * h + (s + 1) * h  # byte symbol + byte position tables
    n += h * h + h  # feature bridge
    n += stack_param_count(h, config.patch_layers)
    n += stack_param_count(h, config.byte_layers)
    n += h * VOCAB + VOCAB  # output head
    if config.class_count is not None:
        n += h * config.class_count + config.class_count
    return n


# -- batched forward ----------------------------------------------------------


def embed_patches_batch(symbols: np.ndarray, params: ModelParams) -> Tensor:
    """symbols (B, N, S) ints in [0, 256] -> patch embeddings (B, N, H)."""
    cfg = params.config
    if symbols.shape[1] > cfg.max_patches:
        raise pc.CapacityError(
            f"{symbols.shape[1]} patches exceed capacity {cfg.max_patches}"
        )
    flat_idx = np.arange(cfg.patch_size) * VOCAB + symbols.astype(np.int64)
    return gather_rows_sum(params.w_linear, flat_idx) + params.b_linear


def predict_patch_features_batch(embedded: Tensor, params: ModelParams) -> Tensor:
    """(B, N, H) patch embeddings -> (B, N, H) predicted features.

    The input sequence is the start embedding followed by the first N-1
    embedded patches (plus their positions), so output i is a function of
    patches strictly before i.
    """
    bsz, n, h = embedded.shape
    start = expand(reshape(params.start_patch, (1, 1, h)), (bsz, 1, h))
    if n > 1:
        shifted = slice_axis(embedded, 1, 0, n - 1) + slice_axis(params.patch_pos, 0, 0, n - 1)
        inp = concat([start, shifted], axis=1)
    else:
        inp = start
    return causal_decoder_stack(inp, params.patch_stack)


def byte_logits_batch(features: Tensor, symbols: np.ndarray, params: ModelParams) -> Tensor:
    """Teacher-forced next-symbol logits for every in-patch position.

    features (B, N, H); symbols (B, N, S) -> logits (B, N, S, 257), where
    logits[..., j, :] conditions on the patch feature and symbols < j.
    """
    cfg = params.config
    bsz, n, h = features.shape
    s = cfg.patch_size
    proj = reshape(affine(features, params.feat_w, params.feat_b), (bsz * n, 1, h))
    if s > 1:
        prefix = symbols[:, :, : s - 1].reshape(bsz * n, s - 1).astype(np.int64)
        inp = concat([proj, embedding(params.byte_emb, prefix)], axis=1)
    else:
        inp = proj
    inp = inp + slice_axis(params.byte_pos, 0, 0, s)
    hidden = causal_decoder_stack(inp, params.byte_stack)
    logits = affine(hidden, params.head_w, params.head_b)
    return reshape(logits, (bsz, n, s, VOCAB))


def sequence_nll_bits_batch(
    symbols: np.ndarray, mask: np.ndarray, params: ModelParams
) -> tuple[Tensor, int]:
    """Summed bits of next-symbol surprisal over masked positions.

    symbols, mask: (B, N, S). Returns (scalar Tensor, counted positions).
    """
    if mask.shape != symbols.shape:
        raise ValueError("mask shape must match symbols shape")
    embedded = embed_patches_batch(symbols, params)
    features = predict_patch_features_batch(embedded, params)
    logits = byte_logits_batch(features, symbols, params)
    flat = reshape(logits, (-1, VOCAB))
    bits = cross_entropy_bits_masked(flat, symbols.reshape(-1), mask.reshape(-1))
    return bits, int(mask.sum())


# -- single-sequence surface ----------------------------------------------------


def _as_batch(seq: pc.PatchSequence) -> np.ndarray:
    return seq.patches[None, :, :]


def embed_patches(seq: pc.PatchSequence, params: ModelParams) -> Tensor:
    """PatchSequence -> (N, H) embeddings."""
    return reshape(embed_patches_batch(_as_batch(seq), params), (len(seq), params.config.hidden))


def predict_patch_features(embedded: Tensor, params: ModelParams) -> Tensor:
    """(N, H) patch embeddings -> (N, H) predicted features."""
    n, h = embedded.shape
    return reshape(
        predict_patch_features_batch(reshape(embedded, (1, n, h)), params), (n, h)
    )


def byte_logits(feature: Tensor, prefix, params: ModelParams) -> Tensor:
    """Next-symbol logits given one patch feature and the in-patch prefix.

    feature (H,); prefix: iterable of symbols already fixed in this patch,
    length < patch_size. Returns (257,) logits for the next position.
    """
    cfg = params.config
    prefix = np.asarray(list(prefix), dtype=np.int64)
    if prefix.shape[0] >= cfg.patch_size:
        raise ValueError("prefix must be shorter than the patch size")
    h = cfg.hidden
    proj = reshape(affine(reshape(feature, (1, h)), params.feat_w, params.feat_b), (1, 1, h))
    if prefix.shape[0]:
        emb = reshape(embedding(params.byte_emb, prefix), (1, prefix.shape[0], h))
        inp = concat([proj, emb], axis=1)
    else:
        inp = proj
    inp = inp + slice_axis(params.byte_pos, 0, 0, prefix.shape[0] + 1)
    hidden = causal_decoder_stack(inp, params.byte_stack)
    last = slice_axis(hidden, 1, prefix.shape[0], prefix.shape[0] + 1)
    return reshape(affine(last, params.head_w, params.head_b), (VOCAB,))


def sequence_nll_bits(
    seq: pc.PatchSequence, params: ModelParams, mask: np.ndarray | None = None
) -> tuple[Tensor, int]:
    """Teacher-forced total bits over one sequence; mask defaults to all symbols."""
    symbols = _as_batch(seq)
    if mask is None:
        mask = np.ones_like(symbols, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != seq.patches.shape:
            raise ValueError("mask shape must match (N, S)")
        mask = mask[None, :, :]
    return sequence_nll_bits_batch(symbols, mask, params)


def pooled_feature(seq: pc.PatchSequence, params: ModelParams) -> Tensor:
    """Mean over patch positions of the final patch-level layer's outputs."""
    feats = predict_patch_features(embed_patches(seq, params), params)
    return mean(feats, axis=0)


def pooled_feature_batch(symbols: np.ndarray, params: ModelParams) -> Tensor:
    embedded = embed_patches_batch(symbols, params)
    return mean(predict_patch_features_batch(embedded, params), axis=1)


def classify(seq: pc.PatchSequence, params: ModelParams) -> Tensor:
    """Class probabilities (K,) from the pooled global feature."""
    if params.cls_w is None:
        raise ValueError("model has no classifier head")
    logits = affine(reshape(pooled_feature(seq, params), (1, -1)), params.cls_w, params.cls_b)
    return reshape(softmax(logits, axis=-1), (params.config.class_count,))


def class_logits_batch(symbols: np.ndarray, params: ModelParams) -> Tensor:
    if params.cls_w is None:
        raise ValueError("model has no classifier head")
    return affine(pooled_feature_batch(symbols, params), params.cls_w, params.cls_b)


# -- generation -----------------------------------------------------------------


def _current_patch_feature(symbol_buf: np.ndarray, n_complete: int, params: ModelParams) -> Tensor:
    """Feature for patch n_complete (0-based) given all completed patches."""
    cfg = params.config
    s, h = cfg.patch_size, cfg.hidden
    if n_complete:
        completed = symbol_buf[: n_complete * s].reshape(1, n_complete, s)
        embedded = embed_patches_batch(completed, params)
        pos = slice_axis(params.patch_pos, 0, 0, n_complete)
        start = reshape(params.start_patch, (1, 1, h))
        inp = concat([start, embedded + pos], axis=1)
    else:
        inp = reshape(params.start_patch, (1, 1, h))
    feats = causal_decoder_stack(inp, params.patch_stack)
    return reshape(slice_axis(feats, 1, n_complete, n_complete + 1), (h,))


def generate_symbols(
    prompt_symbols: np.ndarray,
    params: ModelParams,
    max_content: int,
    mode: str = "greedy",
    top_k: int = 0,
    temperature: float = 1.0,
    seed: int | None = None,
    stop_on_eop_patch: bool = False,
) -> np.ndarray:
    """Greedy or top-k continuation at the symbol level.

    Counts only non-EOP symbols against max_content; always stops at capacity.
    With stop_on_eop_patch, generation ends once a freshly generated patch is
    entirely EOP symbols (the conversion terminator).
    """
    cfg = params.config
    s = cfg.patch_size
    capacity = cfg.capacity_bytes
    if mode not in ("greedy", "top_k"):
        raise ValueError(f"unknown generation mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "top_k" else None

    buf = np.empty(capacity, dtype=np.int64)
    prompt_symbols = np.asarray(prompt_symbols, dtype=np.int64)
    t = prompt_symbols.shape[0]
    if t > capacity:
        raise pc.CapacityError("prompt exceeds model capacity")
    buf[:t] = prompt_symbols

    produced = 0
    feature = None
    patch_eop_run = 0
    with no_grad():
        while produced < max_content and t < capacity:
            n_complete, offset = divmod(t, s)
            if offset == 0:
                feature = _current_patch_feature(buf[:t], n_complete, params)
                patch_eop_run = 0
            elif feature is None:  # prompt ended mid-patch
                feature = _current_patch_feature(buf[:t], n_complete, params)
            logits = byte_logits(feature, buf[n_complete * s : t], params)
            if mode == "greedy":
                sym = int(np.argmax(logits.data))
            else:
                sym = _sample_top_k(logits.data, top_k, temperature, rng)
            buf[t] = sym
            t += 1
            if sym == pc.EOP:
                patch_eop_run += 1
            else:
                produced += 1
            if t % s == 0:
                feature = None
                if stop_on_eop_patch and patch_eop_run == s:
                    break
    return buf[:t]


def _sample_top_k(logits: np.ndarray, k: int, temperature: float, rng) -> int:
    if k < 1:
        raise ValueError("top_k mode requires k >= 1")
    scaled = logits.astype(np.float64) / max(temperature, 1e-6)
    top = np.argsort(scaled)[-k:]
    z = scaled[top] - scaled[top].max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(top, p=p))


def generate_bytes(
    prompt: bytes,
    params: ModelParams,
    max_new: int,
    mode: str = "greedy",
    top_k: int = 0,
    temperature: float = 1.0,
    seed: int | None = None,
) -> bytes:
    """Extend a byte prompt by up to max_new content bytes.

    EOP symbols the model emits (patch terminators) are stripped from the
    returned stream; greedy mode is deterministic.
    """
    prompt_symbols = np.frombuffer(bytes(prompt), dtype=np.uint8).astype(np.int64)
    if max_new == 0:
        return bytes(prompt)
    out = generate_symbols(
        prompt_symbols, params, max_new, mode=mode, top_k=top_k,
        temperature=temperature, seed=seed,
    )
    tail = out[prompt_symbols.shape[0]:]
    return bytes(prompt) + tail[tail != pc.EOP].astype(np.uint8).tobytes()
