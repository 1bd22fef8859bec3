"""Patch codec: segmentation laws, round trips, one-hot density, pair layout."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bytesim import patches as pc


def test_exact_multiple_has_no_padding():
    seq = pc.segment(bytes(range(32)), 16)
    assert len(seq) == 2
    assert not (seq.patches == pc.EOP).any()


def test_tail_padding_is_eop_suffix():
    seq = pc.segment(bytes(range(17)), 16)
    assert len(seq) == 2
    assert seq.patches[1, 0] == 16
    assert (seq.patches[1, 1:] == pc.EOP).all()


def test_single_full_patch():
    seq = pc.segment(bytes(range(16)), 16)
    assert len(seq) == 1 and not (seq.patches == pc.EOP).any()


def test_patch_count_law():
    for t in (1, 15, 16, 17, 31, 32, 100, 8192):
        seq = pc.segment(bytes(t), 16)
        assert len(seq) == -(-t // 16)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        pc.segment(b"", 16)


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=512), st.integers(min_value=1, max_value=32))
def test_roundtrip_identity(data, patch_size):
    assert pc.reassemble(pc.segment(data, patch_size)) == data


def test_roundtrip_identity_large_sizes():
    rng = np.random.default_rng(0)
    for _ in range(40):
        t = int(rng.integers(1, 8193))
        data = rng.integers(0, 256, size=t, dtype=np.uint8).tobytes()
        assert pc.reassemble(pc.segment(data, 16)) == data


def test_single_padded_patch_reassembles():
    patches = np.full((1, 16), pc.EOP, dtype=np.uint16)
    patches[0, 0] = 65
    seq = pc.PatchSequence(patches=patches, patch_size=16, source_length=1)
    assert pc.reassemble(seq) == b"A"


def test_padding_before_content_rejected():
    patches = np.full((1, 16), pc.EOP, dtype=np.uint16)
    patches[0, 1] = 65  # EOP at position 0, content at 1
    seq = pc.PatchSequence(patches=patches, patch_size=16, source_length=1)
    with pytest.raises(ValueError):
        pc.reassemble(seq)


def test_one_hot_flatten_density_and_indices():
    seq = pc.segment(bytes(range(10)), 16)
    vec = pc.one_hot_flatten(seq.patches[0])
    assert vec.shape == (16 * 257,)
    assert vec.sum() == 16
    assert set(np.unique(vec)) == {0.0, 1.0}
    assert vec[0 * 257 + 0] == 1.0  # byte 0 at position 0
    assert vec[5 * 257 + 5] == 1.0
    # padded tail: EOP at position k hits index k*257 + 256
    assert vec[10 * 257 + 256] == 1.0


def test_pair_sequence_layout_and_tags():
    seq = pc.make_pair_sequence(bytes(range(16)), bytes(range(16, 32)), 16)
    assert len(seq) == 3
    assert (seq.patches[1] == pc.EOP).all()
    assert list(seq.segments) == [pc.TAG_FILE_A, pc.TAG_SEPARATOR, pc.TAG_FILE_B]
    # exactly one all-EOP patch sits between the segments
    all_eop = [(row == pc.EOP).all() for row in seq.patches]
    assert all_eop == [False, True, False]


def test_pair_sequence_capacity_enforced():
    with pytest.raises(pc.CapacityError):
        pc.make_pair_sequence(bytes(8192), b"x", 16, max_patches=512)


def test_pair_roundtrip_recovers_both_files():
    a, b = b"hello world", bytes(range(40))
    seq = pc.make_pair_sequence(a, b, 16)
    assert pc.reassemble(seq) == a + b


def test_separator_uniqueness_with_unaligned_files():
    a = b"x" * 21  # pads to two patches
    b = b"y" * 5
    seq = pc.make_pair_sequence(a, b, 16)
    separators = [
        (row == pc.EOP).all() and tag == pc.TAG_SEPARATOR
        for row, tag in zip(seq.patches, seq.segments)
    ]
    assert sum(separators) == 1
    assert seq.segments[2] == pc.TAG_SEPARATOR
