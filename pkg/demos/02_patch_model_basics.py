"""The byte -> patch -> feature -> byte pipeline, on an untrained model.

Run:  python3 demos/02_patch_model_basics.py
"""

import math

import numpy as np

from bytesim import patches as pc
from bytesim.model import (
    ModelConfig,
    embed_patches,
    init_params,
    param_count,
    predict_patch_features,
    sequence_nll_bits,
)
from bytesim.nn import finite_diff_gradcheck
from bytesim.model import sequence_nll_bits_batch

# ---------------------------------------------------------------------------
# 1. Patch segmentation: 16-byte patches, tail padded with the 257th symbol.
# ---------------------------------------------------------------------------
data = b"the quick brown fox jumps over"
seq = pc.segment(data, 16)
print(f"{len(data)} bytes -> {len(seq)} patches of 16 symbols")
print("tail of last patch:", seq.patches[-1, -4:], "(256 = end-of-patch)")
assert pc.reassemble(seq) == data

# ---------------------------------------------------------------------------
# 2. A small model. The reference geometry (16/512/12/3/768) lands at ~110M
#    parameters; this demo uses a toy one.
# ---------------------------------------------------------------------------
cfg = ModelConfig(patch_size=16, max_patches=32, patch_layers=2, byte_layers=1,
                  hidden=64, patch_heads=4, byte_heads=4)
print("reference scale:", f"{param_count(ModelConfig()):,} parameters")
print("demo scale:     ", f"{param_count(cfg):,} parameters")

params = init_params(cfg, seed=0)
feats = predict_patch_features(embed_patches(seq, params), params)
print("predicted features:", feats.shape, "- one per patch, strictly causal")

# ---------------------------------------------------------------------------
# 3. Untrained BPB sits at the uniform bound log2(257) ~ 8.006 bits/byte.
# ---------------------------------------------------------------------------
bits, count = sequence_nll_bits(seq, params)
print(f"untrained: {bits.item() / count:.3f} bits/symbol "
      f"(uniform bound {math.log2(257):.3f})")

# ---------------------------------------------------------------------------
# 4. Gradient fidelity: backprop through the whole stack vs central
#    differences, in float64.
# ---------------------------------------------------------------------------
cfg64 = ModelConfig(patch_size=4, max_patches=8, patch_layers=1, byte_layers=1,
                    hidden=16, patch_heads=2, byte_heads=2)
params64 = init_params(cfg64, seed=1, dtype=np.float64)
symbols = np.random.default_rng(0).integers(0, 257, size=(1, 3, 4))
mask = np.ones_like(symbols, dtype=bool)
err = finite_diff_gradcheck(
    lambda: sequence_nll_bits_batch(symbols, mask, params64)[0],
    params64.parameters(), probes=100, h=1e-5,
)
print(f"gradcheck max relative error: {err:.2e}")
