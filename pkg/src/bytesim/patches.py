"""Byte stream <-> patch representation.

A byte stream is cut into fixed-size patches of S symbols. Symbols 0..255 are
the byte values; symbol 256 (EOP) never occurs inside file content, which
makes it safe both as end-of-file padding and, as a full patch of EOPs, as the
separator between the two halves of a conversion pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EOP = 256
VOCAB = 257

# per-patch segment tags
TAG_FILE_A = 0
TAG_SEPARATOR = 1
TAG_FILE_B = 2
TAG_PADDING = 3

DEFAULT_PATCH_SIZE = 16
DEFAULT_MAX_PATCHES = 512


class CapacityError(ValueError):
    """Sequence does not fit in patch_size * max_patches symbols."""


@dataclass
class PatchSequence:
    """N patches of exactly patch_size symbols each.

    patches: (N, S) uint16 array of symbols in [0, 256]
    source_length: number of content bytes the sequence was built from
    segments: optional (N,) int8 array of TAG_* values (pair sequences only)
    """

    patches: np.ndarray
    patch_size: int
    source_length: int
    segments: np.ndarray | None = None

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.uint16)
        if self.patches.ndim != 2 or self.patches.shape[1] != self.patch_size:
            raise ValueError("patches must be (N, patch_size)")
        if self.patches.size and self.patches.max() > EOP:
            raise ValueError("symbol out of range")

    def __len__(self) -> int:
        return self.patches.shape[0]

    def content_mask(self) -> np.ndarray:
        """(N, S) bool, True at real byte positions (EOP excluded)."""
        return self.patches != EOP

    def segment_mask(self, tag: int) -> np.ndarray:
        """(N, S) bool, True at content positions of patches with `tag`."""
        if self.segments is None:
            raise ValueError("sequence carries no segment map")
        return (self.patches != EOP) & (self.segments == tag)[:, None]


def segment(data: bytes | bytearray | np.ndarray, patch_size: int) -> PatchSequence:
    """Cut bytes into ceil(T/S) patches, padding the tail with EOP symbols."""
    if patch_size < 1:
        raise ValueError("patch size must be >= 1")
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    length = buf.shape[0]
    if length == 0:
        raise ValueError("cannot segment an empty byte sequence")
    n = -(-length // patch_size)
    patches = np.full((n, patch_size), EOP, dtype=np.uint16)
    patches.reshape(-1)[:length] = buf
    return PatchSequence(patches=patches, patch_size=patch_size, source_length=length)


def reassemble(seq: PatchSequence) -> bytes:
    """Inverse of segment: strip padding, return the content bytes.

    Within each file segment, padding must be a contiguous suffix; an EOP
    followed by a content symbol is rejected.
    """
    flat = seq.patches.reshape(-1)
    if seq.segments is not None:
        parts = []
        for tag in (TAG_FILE_A, TAG_FILE_B):
            rows = seq.patches[seq.segments == tag]
            if rows.size:
                parts.append(_strip_padding(rows.reshape(-1)))
        return b"".join(parts)
    return _strip_padding(flat)


def _strip_padding(flat: np.ndarray) -> bytes:
    is_pad = flat == EOP
    if is_pad.any():
        first = int(np.argmax(is_pad))
        if not is_pad[first:].all():
            raise ValueError("padding symbol precedes content")
        flat = flat[:first]
    return flat.astype(np.uint8).tobytes()


def one_hot_flatten(patch: np.ndarray) -> np.ndarray:
    """Patch of S symbols -> flat one-hot vector of length S*257.

    Symbol j at in-patch position k sets index k*257 + j; exactly S ones.
    """
    patch = np.asarray(patch)
    s = patch.shape[0]
    out = np.zeros(s * VOCAB, dtype=np.float32)
    out[np.arange(s) * VOCAB + patch] = 1.0
    return out


def separator_patch(patch_size: int) -> np.ndarray:
    return np.full((1, patch_size), EOP, dtype=np.uint16)


def make_pair_sequence(
    a: bytes,
    b: bytes,
    patch_size: int,
    max_patches: int = DEFAULT_MAX_PATCHES,
) -> PatchSequence:
    """[patches of a] ++ [one all-EOP separator patch] ++ [patches of b].

    File a is padded out to a patch boundary first, so no patch mixes the two
    files and the separator is the only all-EOP patch between segments.
    """
    pa = segment(a, patch_size)
    pb = segment(b, patch_size)
    total = len(pa) + 1 + len(pb)
    if total > max_patches:
        raise CapacityError(f"pair needs {total} patches, capacity is {max_patches}")
    patches = np.concatenate([pa.patches, separator_patch(patch_size), pb.patches])
    segments = np.concatenate(
        [
            np.full(len(pa), TAG_FILE_A, dtype=np.int8),
            np.array([TAG_SEPARATOR], dtype=np.int8),
            np.full(len(pb), TAG_FILE_B, dtype=np.int8),
        ]
    )
    return PatchSequence(
        patches=patches,
        patch_size=patch_size,
        source_length=len(a) + len(b),
        segments=segments,
    )
