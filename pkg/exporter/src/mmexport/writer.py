"""Writers for the mmfuse dataset wire formats.

Implemented here against the published layouts rather than by importing
the consumer, so this package stands alone: embedding files are
`MMEB | u16 version | u32 count | u32 rows_per_sample | u32 dim` (little
endian) followed by float32 payload, the manifest is a
`sample_id,label,split` CSV, and the descriptor is `key = value` lines.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"MMEB"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def write_embedding_file(path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3:
        raise ValueError(f"embeddings must be (count, rows, dim), got shape {arr.shape}")
    count, rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, count, rows, dim))
        fh.write(arr.tobytes())


def write_manifest(path, rows: list[tuple[str, int, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "split"])
        for sample_id, label, split in rows:
            writer.writerow([sample_id, label, split])


def write_descriptor(
    path,
    n_classes: int,
    d_text: int,
    d_image_raw: int,
    n_regions: int,
    comments: list[str] | None = None,
) -> None:
    lines = [f"# {comment}" for comment in (comments or [])]
    lines += [
        f"c = {n_classes}",
        f"d_text = {d_text}",
        f"d_image_raw = {d_image_raw}",
        f"n_regions = {n_regions}",
        "manifest = manifest.csv",
        "title_f = title_f.mmeb",
        "title_c = title_c.mmeb",
        "desc_f = desc_f.mmeb",
        "desc_c = desc_c.mmeb",
        "image_regions = image_regions.mmeb",
    ]
    Path(path).write_text("\n".join(lines) + "\n")
