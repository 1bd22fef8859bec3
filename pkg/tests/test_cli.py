"""End-to-end CLI surface checks (tiny configs, fast paths)."""

import json

import numpy as np
import pytest

from bytesim import cli
from bytesim import cpu as cpusim


def run_cli(capsys, *args):
    cli.main(list(args))
    return capsys.readouterr()


def tiny_config_file(tmp_path, **kw):
    cfg = {
        "model": {
            "patch_size": 16, "max_patches": 96, "patch_layers": 1, "byte_layers": 1,
            "hidden": 16, "patch_heads": 2, "byte_heads": 2, "class_count": None,
        },
        "learning_rate": 1e-3, "batch_size": 4, "epochs": 1, "seed": 0,
        "eval_fraction": 0.25,
    }
    cfg.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cpu_gen_and_trace(tmp_path, capsys):
    out_dir = tmp_path / "data"
    run_cli(capsys, "cpu", "gen", "--count", "4", "--seed", "9", "--out", str(out_dir))
    files = sorted(out_dir.glob("*.bin"))
    assert len(files) == 4
    raw = files[0].read_bytes()
    assert (len(raw) - 1024) % 16 == 0

    captured = run_cli(capsys, "cpu", "trace", "--file", str(files[0]))
    assert captured.out.startswith("Program: [")
    assert "State at step 0:" in captured.out
    assert captured.out.rstrip().splitlines()[-1].startswith("Registers:")


def test_cpu_gen_is_seed_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(capsys, "cpu", "gen", "--count", "3", "--seed", "5", "--out", str(a))
    run_cli(capsys, "cpu", "gen", "--count", "3", "--seed", "5", "--out", str(b))
    for fa, fb in zip(sorted(a.glob("*.bin")), sorted(b.glob("*.bin"))):
        assert fa.read_bytes() == fb.read_bytes()


def test_train_eval_cpu_flow(tmp_path, capsys):
    data = tmp_path / "data"
    run_cli(capsys, "cpu", "gen", "--count", "6", "--seed", "1", "--out", str(data),
            "--max-instructions", "4")
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    run_cli(capsys, "train", "--task", "cpu", "--data", str(data), "--config", cfg,
            "--out", str(out))
    assert (out / "final.ckpt").exists()
    assert (out / "loss_curve.csv").exists()

    captured = run_cli(capsys, "eval", "cpu", "--ckpt", str(out / "final.ckpt"),
                       "--data", str(data), "--feedback", "gt")
    result = json.loads(captured.out)
    assert 0.0 <= result["byte_accuracy"] <= 1.0


def test_train_lm_and_eval_bpb_flow(tmp_path, capsys):
    data = tmp_path / "text"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(6):
        (data / f"{i}.bin").write_bytes(rng.integers(0, 256, 64, dtype=np.uint8).tobytes())
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    run_cli(capsys, "train", "--task", "lm", "--data", str(data), "--config", cfg, "--out", str(out))
    captured = run_cli(capsys, "eval", "bpb", "--ckpt", str(out / "final.ckpt"), "--data", str(data))
    assert 0.0 < json.loads(captured.out)["bpb"] < 9.0


def test_conversion_train_eval_convert_flow(tmp_path, capsys):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir(), b_dir.mkdir()
    from bytesim.corpus import rle_encode

    rng = np.random.default_rng(3)
    for i in range(5):
        text = rng.integers(65, 91, 24, dtype=np.uint8).tobytes()
        (a_dir / f"{i}.txt").write_bytes(text)
        (b_dir / f"{i}.rle").write_bytes(rle_encode(text))
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    run_cli(capsys, "train", "--task", "conversion", "--data", str(a_dir),
            "--pair-data", str(b_dir), "--config", cfg, "--out", str(out))

    captured = run_cli(capsys, "eval", "bpb", "--ckpt", str(out / "final.ckpt"),
                       "--data", str(a_dir), "--pair-data", str(b_dir), "--segment", "b")
    assert json.loads(captured.out)["bpb"] > 0.0

    dst = tmp_path / "converted.bin"
    run_cli(capsys, "convert", "--ckpt", str(out / "final.ckpt"),
            "--in", str(a_dir / "0.txt"), "--dir", "a2b", "--out", str(dst))
    assert dst.exists()


def test_convert_warns_on_direction_mismatch(tmp_path, capsys):
    from bytesim.checkpoint import save_checkpoint
    from bytesim.model import ModelConfig, init_params

    cfg = ModelConfig(patch_size=16, max_patches=96, patch_layers=1, byte_layers=1,
                      hidden=16, patch_heads=2, byte_heads=2)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, init_params(cfg, seed=0), {"task": "conversion", "direction": "a2b"})
    (tmp_path / "in.bin").write_bytes(b"abcdef")
    captured = run_cli(capsys, "convert", "--ckpt", str(ckpt), "--in", str(tmp_path / "in.bin"),
                       "--dir", "b2a", "--out", str(tmp_path / "out.bin"))
    assert "direction" in captured.err


def test_finetune_classify_flow(tmp_path, capsys):
    data = tmp_path / "labeled"
    rng = np.random.default_rng(1)
    for name, lo in (("low", 0), ("high", 128)):
        d = data / name
        d.mkdir(parents=True)
        for i in range(4):
            d.joinpath(f"{i}.bin").write_bytes(
                rng.integers(lo, lo + 128, 40, dtype=np.uint8).tobytes()
            )
    cfg_file = tiny_config_file(tmp_path, epochs=1, batch_size=1)
    from bytesim.checkpoint import save_checkpoint
    from bytesim.model import ModelConfig, init_params

    base = TrainCfgModel = json.loads((tmp_path / "config.json").read_text())["model"]
    params = init_params(ModelConfig.from_dict(base), seed=0)
    ckpt = tmp_path / "base.ckpt"
    save_checkpoint(ckpt, params, {"task": "lm"})
    out = tmp_path / "ft"
    run_cli(capsys, "finetune", "classify", "--ckpt", str(ckpt), "--data", str(data),
            "--config", cfg_file, "--out", str(out))
    captured = run_cli(capsys, "eval", "classify", "--ckpt", str(out / "final.ckpt"),
                       "--data", str(data))
    assert 0.0 <= json.loads(captured.out)["accuracy"] <= 1.0


def test_scaling_cli_smoke(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path, epochs=1)
    captured = run_cli(capsys, "scaling", "--task", "cpu", "--scales", "4,8",
                       "--config", cfg, "--out", str(tmp_path / "sweep"),
                       "--max-instructions", "3")
    rows = json.loads(captured.out)
    assert [r["scale"] for r in rows] == [4, 8]
    assert (tmp_path / "sweep" / "scale_4.csv").exists()
    assert (tmp_path / "sweep" / "scaling.json").exists()
