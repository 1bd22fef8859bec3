"""Evaluation: bits-per-byte, CPU state accuracy, and conversion decoding.

BPB here always means content bits: total -log2 p over real data bytes
divided by the count of real data bytes. Padding and separator symbols are
excluded from both numerator and denominator (training covers them; the
metric does not). Per-position bits are accumulated in float64 so that
segment sums recompose exactly.
"""

from __future__ import annotations

import numpy as np

from . import cpu as cpusim
from . import patches as pc
from .model import ModelParams, VOCAB, generate_symbols
from .tensor import no_grad, reshape
from .training import TrainItem, collate, _forward_logits


def bits_per_position(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """-log2 softmax(logits)[target] per row, in float64. logits (P, V)."""
    ld = logits.astype(np.float64)
    m = ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(ld - m).sum(axis=-1)) + m[:, 0]
    nats = lse - ld[np.arange(ld.shape[0]), targets]
    return nats / np.log(2.0)


def _batched_logits(items: list[TrainItem], params: ModelParams, batch_size: int):
    """Yield (symbols, content_mask, logits ndarray) per collated batch."""
    with no_grad():
        for lo in range(0, len(items), batch_size):
            chunk = items[lo : lo + batch_size]
            symbols, _, content_mask = collate(chunk, params.config.patch_size)
            logits = _forward_logits(symbols, params)
            yield symbols, content_mask, chunk, logits.data


def _pair_item(seq: pc.PatchSequence, segment: str) -> TrainItem:
    if segment == "all":
        content = seq.content_mask()
    elif segment == "file_a":
        content = seq.segment_mask(pc.TAG_FILE_A)
    elif segment == "file_b":
        content = seq.segment_mask(pc.TAG_FILE_B)
    else:
        raise ValueError(f"unknown segment {segment!r}")
    return TrainItem(
        symbols=seq.patches, train_mask=np.ones_like(seq.patches, dtype=bool), content_mask=content
    )


def eval_bpb(
    params: ModelParams,
    dataset: list[pc.PatchSequence] | list[TrainItem],
    segment: str = "all",
    batch_size: int = 16,
) -> float:
    """Teacher-forced content BPB over a dataset.

    For pair sequences, segment 'file_a'/'file_b' restricts the metric to one
    side's content bytes; 'all' covers both sides (never the separator).
    """
    items = []
    for d in dataset:
        if isinstance(d, pc.PatchSequence):
            if segment != "all" and d.segments is None:
                raise ValueError("segment masks need pair sequences")
            items.append(_pair_item(d, segment) if d.segments is not None else
                         TrainItem(d.patches, np.ones_like(d.patches, bool), d.content_mask()))
        else:
            if segment != "all":
                raise ValueError("segment masks need pair sequences")
            items.append(d)
    total_bits = 0.0
    total_count = 0
    for symbols, content_mask, _, logits in _batched_logits(items, params, batch_size):
        flat_mask = content_mask.reshape(-1)
        if not flat_mask.any():
            continue
        bits = bits_per_position(
            logits.reshape(-1, VOCAB)[flat_mask], symbols.reshape(-1)[flat_mask]
        )
        total_bits += bits.sum()
        total_count += int(flat_mask.sum())
    if total_count == 0:
        raise ValueError("empty evaluation mask")
    return total_bits / total_count


# -- CPU state accuracy -------------------------------------------------------------


def instance_item(inst_bytes: bytes, config) -> TrainItem:
    """Serialized CPU instance -> item whose content mask is states 1..n."""
    size = len(inst_bytes)
    if size < cpusim.MEMORY_BYTES + 2 * cpusim.STATE_BYTES or (size - cpusim.MEMORY_BYTES) % cpusim.STATE_BYTES:
        raise ValueError("malformed instance length")
    seq = pc.segment(inst_bytes, config.patch_size)
    mask = np.zeros_like(seq.patches, dtype=bool)
    first_state_patch = (cpusim.MEMORY_BYTES + cpusim.STATE_BYTES) // config.patch_size
    mask[first_state_patch:, :] = True
    return TrainItem(
        symbols=seq.patches,
        train_mask=np.ones_like(seq.patches, dtype=bool),
        content_mask=mask,  # scored bytes: every state after the initial one
    )


def score_state_predictions(truth: np.ndarray, predicted: np.ndarray, mask: np.ndarray) -> float:
    """Byte accuracy over masked positions; arrays are (N, S) or (B, N, S)."""
    if not mask.any():
        raise ValueError("empty scoring mask")
    return float((truth[mask] == predicted[mask]).mean())


def eval_cpu_accuracy(
    params: ModelParams,
    instances: list[bytes],
    feedback: str = "pred",
    batch_size: int = 16,
) -> float:
    """Byte accuracy of greedy state decoding over serialized instances.

    feedback 'gt': teacher-forced; every step conditions on true history.
    feedback 'pred' (default): the model's own greedy bytes are fed back; the
    conditioning prefix is only the memory image and the initial state.
    """
    if feedback not in ("pred", "gt"):
        raise ValueError("feedback must be 'pred' or 'gt'")
    items = [instance_item(raw, params.config) for raw in instances]
    if feedback == "gt":
        correct = 0
        total = 0
        for symbols, mask, _, logits in _batched_logits(items, params, batch_size):
            pred = logits.argmax(axis=-1)
            correct += int((pred[mask] == symbols[mask]).sum())
            total += int(mask.sum())
        return correct / total
    correct = 0
    total = 0
    for lo in range(0, len(items), batch_size):
        chunk = items[lo : lo + batch_size]
        c, t = _predicted_feedback_accuracy(chunk, params)
        correct += c
        total += t
    return correct / total


def _predicted_feedback_accuracy(items: list[TrainItem], params: ModelParams) -> tuple[int, int]:
    """Greedy patch-by-patch rollout with self-feedback, batched over items."""
    from .model import embed_patches_batch
    from .nn import causal_decoder_stack
    from .tensor import affine, concat, embedding, expand, slice_axis

    cfg = params.config
    s = cfg.patch_size
    given = (cpusim.MEMORY_BYTES + cpusim.STATE_BYTES) // s  # memory + initial state
    symbols, _, content_mask = collate(items, s)
    truth = symbols.copy()
    lengths = np.array([it.symbols.shape[0] for it in items])
    n_max = symbols.shape[1]
    work = symbols.copy()
    work[:, given:, :] = pc.EOP  # nothing after the prompt is known to the model
    with no_grad():
        for patch_idx in range(given, n_max):
            active = lengths > patch_idx
            if not active.any():
                break
            prefix = work[:, :patch_idx, :]
            embedded = embed_patches_batch(prefix, params)
            pos = slice_axis(params.patch_pos, 0, 0, patch_idx)
            start = expand(
                reshape(params.start_patch, (1, 1, cfg.hidden)), (symbols.shape[0], 1, cfg.hidden)
            )
            inp = concat([start, embedded + pos], axis=1)
            feats = causal_decoder_stack(inp, params.patch_stack)
            feature = slice_axis(feats, 1, patch_idx, patch_idx + 1)  # (B, 1, H)
            proj = affine(feature, params.feat_w, params.feat_b)
            filled = np.empty((symbols.shape[0], s), dtype=np.int64)
            for j in range(s):
                if j:
                    emb = embedding(params.byte_emb, filled[:, :j])
                    binp = concat([proj, emb], axis=1)
                else:
                    binp = proj
                binp = binp + slice_axis(params.byte_pos, 0, 0, j + 1)
                hidden = causal_decoder_stack(binp, params.byte_stack)
                last = slice_axis(hidden, 1, j, j + 1)
                logits = affine(last, params.head_w, params.head_b)
                filled[:, j] = logits.data[:, 0, :].argmax(axis=-1)
            work[active, patch_idx, :] = filled[active]
    scored = content_mask
    return int((work[scored] == truth[scored]).sum()), int(scored.sum())


# -- conversion -----------------------------------------------------------------------


def convert(
    params: ModelParams,
    data: bytes,
    max_content: int | None = None,
) -> tuple[bytes, bool]:
    """Run the conversion a pair-trained model learned: input ++ separator,
    then greedy generation until a full end-of-patch patch or capacity.

    Returns (output bytes, terminated) where terminated is False if the
    budget or capacity cut generation short of a terminator patch.
    """
    cfg = params.config
    s = cfg.patch_size
    prompt_seq = pc.segment(data, s)
    prompt = np.concatenate([prompt_seq.patches.reshape(-1), np.full(s, pc.EOP, dtype=np.uint16)])
    if prompt.shape[0] // s + 1 > cfg.max_patches:
        raise pc.CapacityError("input leaves no room to generate")
    if max_content is None:
        max_content = cfg.capacity_bytes - prompt.shape[0]
    if max_content == 0:
        return b"", False
    out = generate_symbols(
        prompt.astype(np.int64), params, max_content, mode="greedy", stop_on_eop_patch=True
    )
    tail = out[prompt.shape[0]:]
    terminated = bool(tail.shape[0] >= s and (tail[-s:] == pc.EOP).all())
    return tail[tail != pc.EOP].astype(np.uint8).tobytes(), terminated
