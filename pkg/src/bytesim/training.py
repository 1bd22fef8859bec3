"""Training loops: generative pretraining, generative and classifier fine-tuning.

The optimized quantity is mean bits per counted symbol (Adam makes the
bits-vs-nats scale choice irrelevant). The training mask covers every symbol
of an example, including end-of-patch padding and separator symbols, so the
model learns to emit terminators; reported BPB only ever counts content
bytes.
"""

from __future__ import annotations

import json
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import patches as pc
from .checkpoint import save_checkpoint
from .model import (
    ModelConfig,
    ModelParams,
    VOCAB,
    byte_logits_batch,
    class_logits_batch,
    embed_patches_batch,
    init_params,
    predict_patch_features_batch,
)
from .nn import adam_step, init_adam, zero_grads
from .tensor import Tensor, cross_entropy_bits_masked, no_grad, reshape


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: str = "generative"  # or "classification"
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 32
    seed: int = 0
    eval_fraction: float = 0.01
    terminal_patch: bool = False  # append an all-EOP patch (conversion training)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.objective not in ("generative", "classification"):
            raise ValueError(f"unknown objective {self.objective!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        return cls(model=model, **{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def finetune_defaults(config: TrainConfig) -> TrainConfig:
    """Fine-tuning flips the reference defaults: LR 1e-5, batch size 1."""
    return replace(config, learning_rate=1e-5, batch_size=1)


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    bpb: float
    loss: float
    seconds: float
    accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "split": self.split,
                "bpb": self.bpb,
                "accuracy": self.accuracy,
                "loss": self.loss,
                "seconds": self.seconds,
            },
            sort_keys=True,
        )


def write_metrics(path: str | Path, records: list[MetricsRecord]):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def write_loss_curve(path: str | Path, records: list[MetricsRecord]):
    """CSV of per-epoch train/eval loss (mean bits over the training mask)."""
    by_epoch: dict[int, dict[str, float]] = {}
    for r in records:
        by_epoch.setdefault(r.epoch, {})[r.split] = r.loss
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss_bpb,eval_loss_bpb\n")
        for epoch in sorted(by_epoch):
            row = by_epoch[epoch]
            f.write(f"{epoch},{row.get('train', float('nan')):.6f},{row.get('eval', float('nan')):.6f}\n")


# -- items and batches -----------------------------------------------------------


@dataclass
class TrainItem:
    """One patchified example with its loss and content masks."""

    symbols: np.ndarray  # (N, S) uint16
    train_mask: np.ndarray  # (N, S) bool: symbols the objective covers
    content_mask: np.ndarray  # (N, S) bool: real data bytes (BPB denominator)
    label: int | None = None


def item_from_bytes(data: bytes, config: ModelConfig, label: int | None = None) -> TrainItem:
    seq = pc.segment(data, config.patch_size)
    if len(seq) > config.max_patches:
        raise pc.CapacityError(f"{len(seq)} patches exceed capacity {config.max_patches}")
    return TrainItem(
        symbols=seq.patches,
        train_mask=np.ones_like(seq.patches, dtype=bool),
        content_mask=seq.content_mask(),
        label=label,
    )


def item_from_pair(
    pair_a: bytes, pair_b: bytes, config: ModelConfig, terminal_patch: bool = True
) -> TrainItem:
    """Pair item [a ++ separator ++ b]; optionally append one all-EOP patch.

    The terminal patch is what generation later uses as the stop signal; it
    is covered by the training mask but never counted as content.
    """
    seq = pc.make_pair_sequence(pair_a, pair_b, config.patch_size, config.max_patches)
    symbols = seq.patches
    if terminal_patch and len(seq) < config.max_patches:
        symbols = np.concatenate([symbols, pc.separator_patch(config.patch_size)])
    return TrainItem(
        symbols=symbols,
        train_mask=np.ones_like(symbols, dtype=bool),
        content_mask=np.pad(
            seq.content_mask(), ((0, len(symbols) - len(seq)), (0, 0)), constant_values=False
        ),
    )


def collate(items: list[TrainItem], patch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of items to a common patch count with unmasked EOP patches."""
    n_max = max(it.symbols.shape[0] for it in items)
    b = len(items)
    symbols = np.full((b, n_max, patch_size), pc.EOP, dtype=np.int64)
    train_mask = np.zeros((b, n_max, patch_size), dtype=bool)
    content_mask = np.zeros((b, n_max, patch_size), dtype=bool)
    for i, it in enumerate(items):
        n = it.symbols.shape[0]
        symbols[i, :n] = it.symbols
        train_mask[i, :n] = it.train_mask
        content_mask[i, :n] = it.content_mask
    return symbols, train_mask, content_mask


def _forward_logits(symbols: np.ndarray, params: ModelParams) -> Tensor:
    embedded = embed_patches_batch(symbols, params)
    features = predict_patch_features_batch(embedded, params)
    return byte_logits_batch(features, symbols, params)


def batch_bits(
    symbols: np.ndarray, params: ModelParams, masks: list[np.ndarray]
) -> tuple[list[Tensor], Tensor]:
    """One forward pass, one summed-bits Tensor per mask (first is the loss)."""
    logits = _forward_logits(symbols, params)
    flat = reshape(logits, (-1, VOCAB))
    return [cross_entropy_bits_masked(flat, symbols.reshape(-1), m.reshape(-1)) for m in masks], logits


# -- generative training -----------------------------------------------------------


def split_items(
    items: list, eval_fraction: float, seed: int
) -> tuple[list, list]:
    """Deterministic train/eval partition of a dataset list."""
    n = len(items)
    if n < 2:
        return list(items), list(items)  # degenerate: eval on the training data
    n_eval = min(n - 1, max(1, round(n * eval_fraction)))
    order = np.random.default_rng(seed).permutation(n)
    eval_idx = set(int(i) for i in order[:n_eval])
    train = [items[i] for i in range(n) if i not in eval_idx]
    evals = [items[i] for i in range(n) if i in eval_idx]
    return train, evals


def _epoch_eval(items: list[TrainItem], params: ModelParams, batch_size: int) -> tuple[float, float]:
    """(mean train-mask bits, content BPB) over a dataset, teacher-forced."""
    tot_loss_bits = tot_loss_n = 0.0
    tot_bpb_bits = tot_bpb_n = 0.0
    with no_grad():
        for lo in range(0, len(items), batch_size):
            chunk = items[lo : lo + batch_size]
            symbols, train_mask, content_mask = collate(chunk, params.config.patch_size)
            (loss_bits, content_bits), _ = batch_bits(symbols, params, [train_mask, content_mask])
            tot_loss_bits += loss_bits.item()
            tot_loss_n += train_mask.sum()
            tot_bpb_bits += content_bits.item()
            tot_bpb_n += content_mask.sum()
    return tot_loss_bits / max(tot_loss_n, 1), tot_bpb_bits / max(tot_bpb_n, 1)


def train_generative(
    items: list[TrainItem],
    config: TrainConfig,
    params: ModelParams | None = None,
    out_dir: str | Path | None = None,
    max_steps: int | None = None,
    log_every: int = 0,
) -> tuple[ModelParams, list[MetricsRecord]]:
    """Minimize next-symbol bits over shuffled batches; keep the best-eval model.

    Aborts with TrainingDiverged if the loss ever goes non-finite.
    """
    if not items:
        raise ValueError("empty dataset")
    if params is None:
        params = init_params(config.model, seed=config.seed)
    plist = params.parameters()
    states = init_adam(plist)
    train_items, eval_items = split_items(items, config.eval_fraction, config.seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records: list[MetricsRecord] = []
    best_eval = float("inf")
    rng = np.random.default_rng(config.seed + 1)
    step = 0
    t0 = time.time()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_items))
        ep_bits = ep_count = 0.0
        ep_content_bits = ep_content_count = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_items[i] for i in order[lo : lo + config.batch_size]]
            symbols, train_mask, content_mask = collate(batch, config.model.patch_size)
            zero_grads(plist)
            (bits, content_bits), _ = batch_bits(symbols, params, [train_mask, content_mask])
            n = int(train_mask.sum())
            loss = bits * (1.0 / max(n, 1))
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            loss.backward()
            adam_step(plist, states, config.learning_rate)
            ep_bits += bits.item()
            ep_count += n
            ep_content_bits += content_bits.item()
            ep_content_count += content_mask.sum()
            step += 1
            if log_every and step % log_every == 0:
                print(f"step {step}: train bits/symbol {bits.item() / max(n, 1):.4f}", flush=True)
            if max_steps is not None and step >= max_steps:
                break
        train_rec = MetricsRecord(
            epoch=epoch,
            split="train",
            bpb=ep_content_bits / max(ep_content_count, 1),
            loss=ep_bits / max(ep_count, 1),
            seconds=time.time() - t0,
        )
        eval_loss, eval_bpb = _epoch_eval(eval_items, params, config.batch_size)
        eval_rec = MetricsRecord(
            epoch=epoch, split="eval", bpb=eval_bpb, loss=eval_loss, seconds=time.time() - t0
        )
        records.extend([train_rec, eval_rec])
        if out is not None:
            save_checkpoint(out / "last.ckpt", params, {"epoch": epoch})
            if eval_bpb < best_eval:
                shutil.copyfile(out / "last.ckpt", out / "best.ckpt")
        if eval_bpb < best_eval:
            best_eval = eval_bpb
        if max_steps is not None and step >= max_steps:
            break
    if out is not None:
        write_metrics(out / "metrics.jsonl", records)
        write_loss_curve(out / "loss_curve.csv", records)
    return params, records


def pretrain(
    items: list[TrainItem], config: TrainConfig, out_dir: str | Path | None = None, **kw
) -> tuple[ModelParams, list[MetricsRecord]]:
    return train_generative(items, config, params=None, out_dir=out_dir, **kw)


def finetune_generative(
    params: ModelParams,
    items: list[TrainItem],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    **kw,
) -> tuple[ModelParams, list[MetricsRecord]]:
    """Same loop as pretraining, continuing from an existing model."""
    if params.config.to_dict() != config.model.to_dict():
        raise ValueError("checkpoint/config model shapes do not match")
    return train_generative(items, config, params=params, out_dir=out_dir, **kw)


# -- classification -----------------------------------------------------------------


def attach_classifier(params: ModelParams, class_count: int, seed: int = 0) -> ModelParams:
    """Add a zero-bias classification head to a generatively trained model."""
    from .nn import init_normal, init_zeros
    from .tensor import Parameter

    if class_count < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed + 12345)
    params.config.class_count = class_count
    params.cls_w = Parameter(
        "cls.w", init_normal(rng, (params.config.hidden, class_count), dtype=params.dtype)
    )
    params.cls_b = Parameter("cls.b", init_zeros(class_count, params.dtype))
    return params


def classifier_accuracy(items: list[TrainItem], params: ModelParams) -> float:
    correct = 0
    with no_grad():
        for it in items:
            logits = class_logits_batch(it.symbols[None].astype(np.int64), params)
            if int(np.argmax(logits.data[0])) == it.label:
                correct += 1
    return correct / max(len(items), 1)


def finetune_classifier(
    params: ModelParams,
    items: list[TrainItem],
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[ModelParams, list[MetricsRecord]]:
    """Minimize -log p(label); the generative stack stays trainable.

    Examples are processed one at a time (the fine-tuning batch size), which
    keeps the pooled feature free of padding patches.
    """
    labels = {it.label for it in items}
    if None in labels or len(labels) < 2:
        raise ValueError("classification needs labeled items of >= 2 classes")
    if params.cls_w is None:
        attach_classifier(params, len(labels), seed=config.seed)
    plist = params.parameters()
    states = init_adam(plist)
    train_items, eval_items = split_items(items, config.eval_fraction, config.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records: list[MetricsRecord] = []
    rng = np.random.default_rng(config.seed + 1)
    t0 = time.time()
    best_acc = -1.0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_items))
        ep_loss = 0.0
        for i in order:
            it = train_items[int(i)]
            zero_grads(plist)
            logits = class_logits_batch(it.symbols[None].astype(np.int64), params)
            bits = cross_entropy_bits_masked(
                reshape(logits, (1, -1)), np.array([it.label]), np.array([True])
            )
            loss = bits * float(np.log(2.0))  # -log p(label) in nats
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite classification loss at epoch {epoch}")
            loss.backward()
            adam_step(plist, states, config.learning_rate)
            ep_loss += loss.item()
        acc = classifier_accuracy(eval_items, params)
        records.append(
            MetricsRecord(
                epoch=epoch,
                split="eval",
                bpb=0.0,
                loss=ep_loss / max(len(train_items), 1),
                seconds=time.time() - t0,
                accuracy=acc,
            )
        )
        if out is not None:
            save_checkpoint(out / "last.ckpt", params, {"epoch": epoch})
            if acc > best_acc:
                shutil.copyfile(out / "last.ckpt", out / "best.ckpt")
        if acc > best_acc:
            best_acc = acc
    if out is not None:
        write_metrics(out / "metrics.jsonl", records)
    return params, records
