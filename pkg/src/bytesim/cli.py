"""Command-line surface.

Subcommands:
  cpu gen / cpu trace      dataset generation and human-readable trace dumps
  train                    generative training on lm / cpu / conversion data
  finetune lm|classify     continue training from a checkpoint
  eval bpb|cpu|classify    metrics for a checkpoint
  convert                  run a pair-trained model on one input file
  scaling                  data-scale sweep with loss curves

Without --config, training commands use the desk-scale model; pass a JSON
config to change any TrainConfig field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cpu as cpusim
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import build_pair_dataset, ingest_directory
from .evaluation import convert as run_convert
from .evaluation import eval_bpb, eval_cpu_accuracy
from .model import desk_config
from .patches import make_pair_sequence
from .scaling import run_scaling_experiment
from .training import (
    TrainConfig,
    finetune_classifier,
    finetune_defaults,
    finetune_generative,
    item_from_bytes,
    item_from_pair,
    train_generative,
)


def _load_config(path: str | None, task: str | None = None) -> TrainConfig:
    if path is None:
        cfg = TrainConfig(model=desk_config())
    else:
        cfg = TrainConfig.from_json(path)
    if task == "conversion":
        cfg.terminal_patch = True
    return cfg


def _ingest_items(data_dir: str, config: TrainConfig, labeled: bool = False):
    mode = "label-by-subdirectory" if labeled else "flat"
    _, examples, report = ingest_directory(
        data_dir, mode=mode, max_bytes=config.model.capacity_bytes
    )
    if report.skipped_oversize:
        print(f"skipped {report.skipped_oversize} empty/oversized files", file=sys.stderr)
    return [item_from_bytes(e.data, config.model, label=e.label) for e in examples]


def _cmd_cpu_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        inst = cpusim.generate_instance(rng, args.max_instructions)
        (out / f"{i:06d}.bin").write_bytes(cpusim.serialize_instance(inst))
    print(f"wrote {args.count} instances to {out}")


def _cmd_cpu_trace(args):
    inst = cpusim.deserialize_instance(Path(args.file).read_bytes())
    print(cpusim.render_trace(inst))


def _cmd_train(args):
    config = _load_config(args.config, args.task)
    if args.task in ("lm", "cpu"):
        items = _ingest_items(args.data, config)
        meta = {"task": args.task}
    else:
        if not args.pair_data:
            raise SystemExit("--pair-data is required for the conversion task")
        pairs, report = build_pair_dataset(
            args.data, args.pair_data, config.model.patch_size, config.model.max_patches
        )
        if report["skipped_capacity"] or report["unmatched_a"] or report["unmatched_b"]:
            print(f"pairing report: {report}", file=sys.stderr)
        items = [
            item_from_pair(p.side_a, p.side_b, config.model, terminal_patch=config.terminal_patch)
            for p in pairs
        ]
        meta = {"task": "conversion", "direction": "a2b"}
    params, _ = train_generative(items, config, out_dir=args.out)
    save_checkpoint(Path(args.out) / "final.ckpt", params, meta)
    print(f"final checkpoint: {Path(args.out) / 'final.ckpt'}")


def _cmd_finetune(args):
    params, meta = load_checkpoint(args.ckpt)
    config = _load_config(args.config)
    if args.config is None:
        config = finetune_defaults(config)
    config.model = params.config
    out = Path(args.out)
    if args.mode == "lm":
        items = _ingest_items(args.data, config)
        params, _ = finetune_generative(params, items, config, out_dir=out)
    else:
        items = _ingest_items(args.data, config, labeled=True)
        params, _ = finetune_classifier(params, items, config, out_dir=out)
    save_checkpoint(out / "final.ckpt", params, meta)
    print(f"final checkpoint: {out / 'final.ckpt'}")


def _cmd_eval(args):
    params, meta = load_checkpoint(args.ckpt)
    config = TrainConfig(model=params.config)
    if args.what == "bpb":
        if args.pair_data:
            pairs, _ = build_pair_dataset(
                args.data, args.pair_data, params.config.patch_size, params.config.max_patches
            )
            seqs = [
                make_pair_sequence(p.side_a, p.side_b, params.config.patch_size, params.config.max_patches)
                for p in pairs
            ]
            segment = {"a": "file_a", "b": "file_b", "all": "all"}[args.segment]
            print(json.dumps({"bpb": eval_bpb(params, seqs, segment=segment)}))
        else:
            if args.segment != "all":
                raise SystemExit("--segment needs --pair-data")
            items = _ingest_items(args.data, config)
            print(json.dumps({"bpb": eval_bpb(params, items)}))
    elif args.what == "cpu":
        files = sorted(Path(args.data).glob("*.bin"))
        if not files:
            raise SystemExit(f"no .bin instances under {args.data}")
        instances = [f.read_bytes() for f in files]
        acc = eval_cpu_accuracy(params, instances, feedback=args.feedback)
        print(json.dumps({"feedback": args.feedback, "byte_accuracy": acc}))
    else:
        from .training import classifier_accuracy

        items = _ingest_items(args.data, config, labeled=True)
        print(json.dumps({"accuracy": classifier_accuracy(items, params)}))


def _cmd_convert(args):
    params, meta = load_checkpoint(args.ckpt)
    trained = meta.get("direction")
    if trained is not None and args.dir != trained:
        print(
            f"warning: checkpoint was trained for direction {trained}, got --dir {args.dir}",
            file=sys.stderr,
        )
    data = Path(args.infile).read_bytes()
    out_bytes, terminated = run_convert(params, data)
    if not terminated:
        print("warning: generation stopped before a terminator patch", file=sys.stderr)
    if args.out:
        Path(args.out).write_bytes(out_bytes)
        print(f"wrote {len(out_bytes)} bytes to {args.out}")
    else:
        sys.stdout.buffer.write(out_bytes)


def _cmd_scaling(args):
    config = _load_config(args.config, args.task if args.task == "conversion" else None)
    scales = [int(s) for s in args.scales.split(",") if s]
    rows = run_scaling_experiment(
        args.task, scales, config, out_dir=args.out, max_instructions=args.max_instructions
    )
    print(json.dumps(rows, indent=2))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bytesim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    cpu = sub.add_parser("cpu", help="CPU dataset tools")
    cpu_sub = cpu.add_subparsers(dest="cpu_command", required=True)
    gen = cpu_sub.add_parser("gen", help="generate random instances")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--max-instructions", type=int, default=cpusim.MAX_INSTRUCTIONS)
    gen.set_defaults(func=_cmd_cpu_gen)
    trace = cpu_sub.add_parser("trace", help="human-readable dump of one instance")
    trace.add_argument("--file", required=True)
    trace.set_defaults(func=_cmd_cpu_trace)

    train = sub.add_parser("train", help="train from scratch")
    train.add_argument("--task", choices=("lm", "cpu", "conversion"), required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--pair-data")
    train.add_argument("--config")
    train.add_argument("--out", required=True)
    train.set_defaults(func=_cmd_train)

    ft = sub.add_parser("finetune", help="continue from a checkpoint")
    ft.add_argument("mode", choices=("lm", "classify"))
    ft.add_argument("--ckpt", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--config")
    ft.add_argument("--out", required=True)
    ft.set_defaults(func=_cmd_finetune)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("what", choices=("bpb", "cpu", "classify"))
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--pair-data")
    ev.add_argument("--segment", choices=("all", "a", "b"), default="all")
    ev.add_argument("--feedback", choices=("pred", "gt"), default="pred")
    ev.set_defaults(func=_cmd_eval)

    cv = sub.add_parser("convert", help="convert one file with a pair-trained model")
    cv.add_argument("--ckpt", required=True)
    cv.add_argument("--in", dest="infile", required=True)
    cv.add_argument("--dir", choices=("a2b", "b2a"), required=True)
    cv.add_argument("--out")
    cv.set_defaults(func=_cmd_convert)

    sc = sub.add_parser("scaling", help="data-scale sweep")
    sc.add_argument("--task", choices=("cpu", "conversion"), required=True)
    sc.add_argument("--scales", required=True, help="comma-separated counts, e.g. 1000,3000,10000")
    sc.add_argument("--config")
    sc.add_argument("--out")
    sc.add_argument("--max-instructions", type=int, default=None)
    sc.set_defaults(func=_cmd_scaling)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
