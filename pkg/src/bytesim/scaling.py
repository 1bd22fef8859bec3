"""Data-scale sweeps: train one fresh model per scale, emit curves and a table.

Each scale trains a randomly initialized model on the first `scale` items of
the task's training pool and evaluates on a fixed held-out set, so the trend
across scales isolates data volume. Loss curves land in
`<out>/scale_<n>.csv` (epoch, train_loss_bpb, eval_loss_bpb); the final
metric table in `<out>/scaling.json`.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cpu as cpusim
from .corpus import synthetic_pairs
from .evaluation import eval_bpb, eval_cpu_accuracy
from .model import init_params
from .patches import make_pair_sequence
from .training import TrainConfig, item_from_bytes, item_from_pair, train_generative, write_loss_curve

DEFAULT_EVAL_COUNT = 256


def cpu_instance_pool(
    count: int, seed: int, max_instructions: int = cpusim.MAX_INSTRUCTIONS
) -> list[bytes]:
    rng = np.random.default_rng(seed)
    return [
        cpusim.serialize_instance(cpusim.generate_instance(rng, max_instructions))
        for _ in range(count)
    ]


def run_scaling_experiment(
    task: str,
    scales: list[int],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    eval_count: int = DEFAULT_EVAL_COUNT,
    max_instructions: int | None = None,
    data_seed: int = 7,
) -> list[dict]:
    """Train per scale, return rows of {scale, eval_bpb, ...} sorted by scale.

    task 'cpu': random instances; accuracy is ground-truth-feedback byte
    accuracy over held-out instances. task 'conversion': synthetic RLE pairs;
    reports per-segment BPB on held-out pairs.
    """
    if task not in ("cpu", "conversion"):
        raise ValueError(f"unknown scaling task {task!r}")
    scales = sorted(int(s) for s in scales)
    if not scales:
        raise ValueError("no scales given")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    cap = max_instructions or _default_cap(config)
    if task == "cpu":
        pool = cpu_instance_pool(scales[-1], data_seed, cap)
        held_out = cpu_instance_pool(eval_count, data_seed + 1, cap)
        train_pool = [item_from_bytes(raw, config.model) for raw in pool]
        eval_items = [item_from_bytes(raw, config.model) for raw in held_out]
    else:
        pool_pairs = synthetic_pairs(scales[-1], data_seed)
        held_pairs = synthetic_pairs(eval_count, data_seed + 1)
        train_pool = [
            item_from_pair(p.side_a, p.side_b, config.model, terminal_patch=config.terminal_patch)
            for p in pool_pairs
        ]
        eval_items = held_pairs

    rows = []
    for scale in scales:
        if scale > len(train_pool):
            raise ValueError(f"scale {scale} exceeds available data {len(train_pool)}")
        run_cfg = replace(config)
        params = init_params(run_cfg.model, seed=run_cfg.seed)
        params, records = train_generative(train_pool[:scale], run_cfg, params=params)
        if out is not None:
            write_loss_curve(out / f"scale_{scale}.csv", records)
        row: dict = {"scale": scale}
        if task == "cpu":
            row["eval_bpb"] = eval_bpb(params, eval_items)
            row["accuracy_gt"] = eval_cpu_accuracy(params, held_out, feedback="gt")
        else:
            seqs = [
                make_pair_sequence(p.side_a, p.side_b, config.model.patch_size, config.model.max_patches)
                for p in eval_items
            ]
            row["eval_bpb"] = eval_bpb(params, seqs, segment="all")
            row["eval_bpb_generated"] = eval_bpb(params, seqs, segment="file_b")
            row["eval_bpb_scratch"] = eval_bpb(params, seqs, segment="file_a")
        rows.append(row)
        if out is not None:
            (out / "scaling.json").write_text(json.dumps(rows, indent=2))
    return rows


def _default_cap(config: TrainConfig) -> int:
    """Largest program length whose serialized instance fits model capacity."""
    budget = config.model.capacity_bytes - cpusim.MEMORY_BYTES
    return max(1, min(cpusim.MAX_INSTRUCTIONS, budget // cpusim.STATE_BYTES - 1))
