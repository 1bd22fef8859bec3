"""Classification fine-tuning: pooled features + a softmax head.

The toy task keeps low bytes (0..127) in class 0 and high bytes (128..255)
in class 1, so "first byte < 128" decides the label and every byte repeats
the evidence. Byte values are one-hot symbols to this model - nothing about
value 130 resembles value 131 until training makes it so - which is why the
redundant construction converges in a single epoch.

Run:  python3 demos/06_classification.py   (~30 seconds)
"""

import numpy as np

from bytesim.model import ModelConfig, init_params
from bytesim.training import (
    TrainConfig,
    classifier_accuracy,
    finetune_classifier,
    item_from_bytes,
    split_items,
)

model = ModelConfig(patch_size=16, max_patches=8, patch_layers=1, byte_layers=1,
                    hidden=64, patch_heads=4, byte_heads=4)
config = TrainConfig(model=model, objective="classification", learning_rate=1e-3,
                     batch_size=1, epochs=3, seed=0, eval_fraction=0.25)

rng = np.random.default_rng(0)
items = []
for i in range(300):
    label = i % 2
    lo = 128 if label else 0
    data = rng.integers(lo, lo + 128, 48, dtype=np.uint8).tobytes()
    items.append(item_from_bytes(data, model, label=label))

params = init_params(model, seed=0)
params, records = finetune_classifier(params, items, config)
for r in records:
    print(f"epoch {r.epoch}: eval accuracy {r.accuracy:.2f}")

_, eval_items = split_items(items, config.eval_fraction, config.seed)
print("final eval accuracy:", classifier_accuracy(eval_items, params))
