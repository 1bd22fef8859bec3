"""bytesim: byte-level patch-hierarchical modelling of digital data.

The package has three layers:

  numeric substrate   tensor, nn          autodiff, decoder stacks, Adam
  representation      patches, model      byte<->patch codec, the hierarchical
                                          next-byte model, generation
  experiments         cpu, corpus,        synthetic CPU + dataset tooling,
                      training,           training/eval loops, scale sweeps,
                      evaluation,         checkpointing, CLI
                      scaling, checkpoint, cli
"""

from .model import ModelConfig, desk_config, init_params, param_count
from .patches import EOP, PatchSequence, make_pair_sequence, reassemble, segment
from .training import TrainConfig

__all__ = [
    "EOP",
    "ModelConfig",
    "PatchSequence",
    "TrainConfig",
    "desk_config",
    "init_params",
    "make_pair_sequence",
    "param_count",
    "reassemble",
    "segment",
]
