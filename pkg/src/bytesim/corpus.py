"""Dataset assembly: directory ingestion, splits, pairs, synthetic pairs.

Files larger than the model capacity (8192 bytes at the reference patch
geometry) are skipped, never truncated. Everything here is deterministic:
manifests sort by source id, splits are seeded, and the synthetic pair
generator is a pure function of (count, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import patches as pc

MAX_EXAMPLE_BYTES = pc.DEFAULT_PATCH_SIZE * pc.DEFAULT_MAX_PATCHES  # 8192

PRINTABLE_LO = 32
PRINTABLE_HI = 126  # inclusive


@dataclass
class Example:
    data: bytes
    source_id: str
    label: int | None = None


@dataclass
class PairExample:
    side_a: bytes
    side_b: bytes
    source_id: str


@dataclass
class ManifestEntry:
    source_id: str
    length: int
    label: int | None
    split: str | None
    digest: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.source_id,
                "length": self.length,
                "label": self.label,
                "split": self.split,
                "digest": self.digest,
            },
            sort_keys=True,
        )


@dataclass
class IngestReport:
    ingested: int = 0
    skipped_oversize: int = 0
    label_names: list[str] = field(default_factory=list)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def ingest_directory(
    path: str | Path,
    mode: str = "flat",
    max_bytes: int = MAX_EXAMPLE_BYTES,
) -> tuple[list[ManifestEntry], list[Example], IngestReport]:
    """Read every regular file under path, in sorted source-id order.

    mode 'label-by-subdirectory' assigns label ids by sorted immediate
    subdirectory name; files directly in path are then ignored.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a readable directory")
    if mode not in ("flat", "label-by-subdirectory"):
        raise ValueError(f"unknown ingest mode {mode!r}")
    report = IngestReport()
    label_of: dict[str, int] = {}
    if mode == "label-by-subdirectory":
        names = sorted(p.name for p in root.iterdir() if p.is_dir())
        label_of = {name: i for i, name in enumerate(names)}
        report.label_names = names
        files = [p for p in sorted(root.rglob("*")) if p.is_file() and p.parent != root]
    else:
        files = [p for p in sorted(root.rglob("*")) if p.is_file()]

    entries: list[ManifestEntry] = []
    examples: list[Example] = []
    for f in sorted(files, key=lambda p: p.relative_to(root).as_posix()):
        data = f.read_bytes()
        if len(data) > max_bytes or len(data) == 0:
            report.skipped_oversize += 1
            continue
        label = None
        if mode == "label-by-subdirectory":
            top = f.relative_to(root).parts[0]
            label = label_of[top]
        sid = f.relative_to(root).as_posix()
        entries.append(
            ManifestEntry(source_id=sid, length=len(data), label=label, split=None, digest=_digest(data))
        )
        examples.append(Example(data=data, source_id=sid, label=label))
        report.ingested += 1
    if not entries:
        raise ValueError(f"no usable files under {root}")
    return entries, examples, report


def split(entries: list[ManifestEntry], eval_fraction: float, seed: int) -> list[ManifestEntry]:
    """Tag every entry 'train' or 'eval'; eval count is round(n*f), clamped to 1..n-1."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in (0, 1)")
    n = len(entries)
    if n < 2:
        raise ValueError("need at least 2 entries to split")
    n_eval = min(n - 1, max(1, round(n * eval_fraction)))
    order = np.random.default_rng(seed).permutation(n)
    eval_idx = set(int(i) for i in order[:n_eval])
    for i, e in enumerate(entries):
        e.split = "eval" if i in eval_idx else "train"
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]):
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def build_pair_dataset(
    dir_a: str | Path,
    dir_b: str | Path,
    patch_size: int = pc.DEFAULT_PATCH_SIZE,
    max_patches: int = pc.DEFAULT_MAX_PATCHES,
) -> tuple[list[PairExample], dict]:
    """Pair files by stem across two directories; skip unmatched or oversized."""
    a_root, b_root = Path(dir_a), Path(dir_b)
    for d in (a_root, b_root):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a readable directory")
    a_files = {p.stem: p for p in sorted(a_root.iterdir()) if p.is_file()}
    b_files = {p.stem: p for p in sorted(b_root.iterdir()) if p.is_file()}
    report = {"unmatched_a": 0, "unmatched_b": 0, "skipped_capacity": 0}
    report["unmatched_a"] = len(set(a_files) - set(b_files))
    report["unmatched_b"] = len(set(b_files) - set(a_files))
    pairs: list[PairExample] = []
    for stem in sorted(set(a_files) & set(b_files)):
        a, b = a_files[stem].read_bytes(), b_files[stem].read_bytes()
        if not a or not b:
            report["skipped_capacity"] += 1
            continue
        n_patches = -(-len(a) // patch_size) + 1 + -(-len(b) // patch_size)
        if n_patches > max_patches:
            report["skipped_capacity"] += 1
            continue
        pairs.append(PairExample(side_a=a, side_b=b, source_id=stem))
    if not pairs:
        raise ValueError("no matched pairs between the two directories")
    return pairs, report


# -- synthetic conversion pairs --------------------------------------------------


def rle_encode(data: bytes) -> bytes:
    """(value, run_length) byte pairs; runs longer than 255 are split."""
    out = bytearray()
    i = 0
    while i < len(data):
        v = data[i]
        run = 1
        while i + run < len(data) and data[i + run] == v and run < 255:
            run += 1
        out += bytes((v, run))
        i += run
    return bytes(out)


def rle_decode(data: bytes) -> bytes:
    if len(data) % 2:
        raise ValueError("run-length stream must be (value, count) pairs")
    out = bytearray()
    for i in range(0, len(data), 2):
        count = data[i + 1]
        if count == 0:
            raise ValueError("zero-length run")
        out += bytes([data[i]]) * count
    return bytes(out)


def synthetic_pairs(count: int, seed: int, min_len: int = 16, max_len: int = 512) -> list[PairExample]:
    """Random printable text on side A, its run-length encoding on side B.

    The transform is deterministic and invertible, so a perfect conversion
    model exists in both directions while side A itself stays incompressible.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        text = rng.integers(PRINTABLE_LO, PRINTABLE_HI + 1, size=n, dtype=np.uint8).tobytes()
        pairs.append(PairExample(side_a=text, side_b=rle_encode(text), source_id=f"rle-{seed}-{i:06d}"))
    return pairs
