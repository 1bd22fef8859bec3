"""Train a small model to step the CPU, then score it byte-for-byte.

An instance is the 1KB memory image followed by all 16-byte states; the model
sees everything as one byte stream. Accuracy counts only the state bytes
after the initial state, in two regimes: teacher-forced ('gt') and
self-feedback ('pred'). A few minutes; accuracy here is nowhere near
converged — see the scaling demo and the acceptance suite for real runs.

Run:  python3 demos/04_cpu_state_modelling.py
"""

import numpy as np

from bytesim import cpu
from bytesim.evaluation import eval_bpb, eval_cpu_accuracy
from bytesim.model import desk_config
from bytesim.training import TrainConfig, item_from_bytes, pretrain

MAX_PROGRAM = 8  # short programs keep the demo quick

rng = np.random.default_rng(0)
train_raw = [cpu.serialize_instance(cpu.generate_instance(rng, MAX_PROGRAM)) for _ in range(600)]
held_rng = np.random.default_rng(1)
held_raw = [cpu.serialize_instance(cpu.generate_instance(held_rng, MAX_PROGRAM)) for _ in range(48)]

config = TrainConfig(model=desk_config(), learning_rate=1e-3, batch_size=16,
                     epochs=2, seed=0, eval_fraction=0.05)
items = [item_from_bytes(raw, config.model) for raw in train_raw]

print(f"training on {len(items)} instances (programs <= {MAX_PROGRAM} instructions)")
params, records = pretrain(items, config)
for r in records:
    print(f"epoch {r.epoch} {r.split:5s}: loss {r.loss:.3f} bits/sym, content BPB {r.bpb:.3f}")

held_items = [item_from_bytes(raw, config.model) for raw in held_raw]
print(f"held-out BPB:               {eval_bpb(params, held_items):.3f}")
print(f"held-out byte accuracy, teacher-forced: "
      f"{eval_cpu_accuracy(params, held_raw, feedback='gt'):.3f}")
print(f"held-out byte accuracy, self-feedback:  "
      f"{eval_cpu_accuracy(params, held_raw[:16], feedback='pred'):.3f}")
print("(a uniform random predictor sits at 1/256 ~ 0.004)")
