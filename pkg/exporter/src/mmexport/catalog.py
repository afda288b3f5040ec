"""Product catalog input: one CSV row per product with its texts, image
path, and integer label."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import CatalogError

CATALOG_HEADER = ["sample_id", "title", "description", "image", "label"]


@dataclass
class CatalogRow:
    sample_id: str
    title: str
    description: str
    image: Path
    label: int


def read_catalog(path) -> list[CatalogRow]:
    """Read a catalog CSV; image paths are resolved relative to the file."""
    path = Path(path)
    base = path.parent
    rows: list[CatalogRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CATALOG_HEADER:
            raise CatalogError(f"catalog header {header!r} != {CATALOG_HEADER}")
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(CATALOG_HEADER):
                raise CatalogError(f"{path}:{line_no}: expected {len(CATALOG_HEADER)} fields, got {len(record)}")
            sample_id, title, description, image, label = record
            if not sample_id:
                raise CatalogError(f"{path}:{line_no}: empty sample_id")
            try:
                label_value = int(label)
            except ValueError:
                raise CatalogError(f"{path}:{line_no}: non-integer label {label!r}") from None
            if label_value < 0:
                raise CatalogError(f"{path}:{line_no}: negative label {label_value}")
            rows.append(CatalogRow(sample_id, title, description, base / image, label_value))
    if not rows:
        raise CatalogError(f"{path}: catalog has no rows")
    return rows
