"""The export pipeline: catalog rows -> four text embedding files, one
region-stack file, a manifest, and a dataset descriptor."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .catalog import CatalogRow, read_catalog
from .encoders import resolve_image_encoder, resolve_text_encoder
from .errors import EncoderError
from .writer import write_descriptor, write_embedding_file, write_manifest

IMAGE_SIDE = 224


@dataclass
class ExportJob:
    catalog: Path
    out_dir: Path
    text_encoder_f: str = "hashed:64:flaubert"
    text_encoder_c: str = "hashed:64:camembert"
    image_encoder: str = "patch-stats:128"
    grid_side: int = 16


class ExportError(RuntimeError):
    """Raised when any catalog row cannot be exported; carries all row errors."""

    def __init__(self, row_errors: list[tuple[str, str]]):
        self.row_errors = row_errors
        lines = "\n".join(f"  {sample_id}: {reason}" for sample_id, reason in row_errors)
        super().__init__(f"{len(row_errors)} catalog row(s) failed:\n{lines}")


def image_to_patches(image: Image.Image, grid_side: int, patch_size: int | None):
    """Resize to 224x224, cut a grid_side x grid_side grid in row-major
    order, and optionally upscale each patch to the encoder input size."""
    resized = image.convert("RGB").resize((IMAGE_SIDE, IMAGE_SIDE), Image.BILINEAR)
    cell = IMAGE_SIDE // grid_side
    patches = []
    for row in range(grid_side):
        for col in range(grid_side):
            box = (col * cell, row * cell, (col + 1) * cell, (row + 1) * cell)
            patch = resized.crop(box)
            if patch_size is not None and patch_size != cell:
                patch = patch.resize((patch_size, patch_size), Image.BILINEAR)
            patches.append(patch)
    return patches


def _check_rows(rows: list[CatalogRow]) -> None:
    errors: list[tuple[str, str]] = []
    seen: set[str] = set()
    for row in rows:
        if row.sample_id in seen:
            errors.append((row.sample_id, "duplicate sample_id"))
        seen.add(row.sample_id)
        if not row.title.strip():
            errors.append((row.sample_id, "empty title"))
        if not row.description.strip():
            errors.append((row.sample_id, "empty description"))
        if not row.image.is_file():
            errors.append((row.sample_id, f"image not found: {row.image}"))
        else:
            try:
                with Image.open(row.image) as img:
                    img.verify()
            except Exception as exc:
                errors.append((row.sample_id, f"unreadable image: {exc}"))
    if errors:
        raise ExportError(errors)


def export(job: ExportJob) -> Path:
    """Run the encoders over every catalog row and write the dataset.

    All rows are checked up front and the job fails listing every bad row;
    files are only written once everything has encoded. Returns the
    descriptor path.
    """
    if job.grid_side < 1 or IMAGE_SIDE % job.grid_side != 0:
        raise EncoderError(f"grid side must divide {IMAGE_SIDE}, got {job.grid_side}")
    rows = read_catalog(job.catalog)
    _check_rows(rows)

    encoder_f = resolve_text_encoder(job.text_encoder_f)
    encoder_c = resolve_text_encoder(job.text_encoder_c)
    image_encoder = resolve_image_encoder(job.image_encoder)
    if encoder_f.dim != encoder_c.dim:
        raise EncoderError(
            f"text encoders disagree on dim: {encoder_f.name} gives {encoder_f.dim}, "
            f"{encoder_c.name} gives {encoder_c.dim}"
        )

    titles = [row.title for row in rows]
    descriptions = [row.description for row in rows]
    title_f = encoder_f.encode(titles)
    desc_f = encoder_f.encode(descriptions)
    title_c = encoder_c.encode(titles)
    desc_c = encoder_c.encode(descriptions)

    n_regions = job.grid_side * job.grid_side
    regions = np.zeros((len(rows), n_regions, image_encoder.dim), dtype=np.float32)
    for i, row in enumerate(rows):
        with Image.open(row.image) as img:
            patches = image_to_patches(img, job.grid_side, image_encoder.input_size)
        regions[i] = image_encoder.encode(patches)

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_embedding_file(out_dir / "title_f.mmeb", title_f)
    write_embedding_file(out_dir / "title_c.mmeb", title_c)
    write_embedding_file(out_dir / "desc_f.mmeb", desc_f)
    write_embedding_file(out_dir / "desc_c.mmeb", desc_c)
    write_embedding_file(out_dir / "image_regions.mmeb", regions)
    write_manifest(out_dir / "manifest.csv", [(r.sample_id, r.label, "unassigned") for r in rows])
    n_classes = max(row.label for row in rows) + 1
    descriptor = out_dir / "dataset.desc"
    write_descriptor(
        descriptor,
        n_classes=n_classes,
        d_text=encoder_f.dim,
        d_image_raw=image_encoder.dim,
        n_regions=n_regions,
        comments=[
            f"exported from {Path(job.catalog).name}",
            f"text encoders: {encoder_f.name} (titles/descriptions), {encoder_c.name} (titles/descriptions)",
            "text pooling: first-position summary vector",
            f"image encoder: {image_encoder.name}, applied per region on a "
            f"{job.grid_side}x{job.grid_side} grid of a {IMAGE_SIDE}x{IMAGE_SIDE} resize",
        ],
    )
    return descriptor
