"""Dataset plumbing: the binary embedding container, manifest + descriptor
text formats, stratified splits, validation, and the synthetic benchmark
generator.

A dataset on disk is one descriptor file (key = value lines) pointing at a
manifest (`sample_id,label,split` CSV) and five embedding files: the four
text modalities with one row per sample and the image regions with N_r
rows per sample.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, SplitError
from .model import ModalityBatch, ModalitySample, TEXT_MODALITIES
from .rng import SeededRng

EMBED_MAGIC = b"MMEB"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sHIII")  # magic, version, count, rows_per_sample, dim

MODALITY_NAMES = TEXT_MODALITIES + ("image_regions",)
SPLITS = ("train", "val", "test", "unassigned")

# modalities a unimodal mask may zero out; "text" expands to all four text ones
MASKABLE = {"title_f", "title_c", "desc_f", "desc_c", "image"}


# ---------------------------------------------------------------------------
# embedding container

def write_embeddings(path, values: np.ndarray) -> None:
    """Write a (count, rows_per_sample, dim) float32 array; a 2-D input is
    treated as one row per sample."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3:
        raise ShapeError(f"embeddings must be (count, rows, dim), got shape {arr.shape}")
    count, rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, count, rows, dim))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_embeddings(path) -> np.ndarray:
    """Read and header-validate an embedding file into (count, rows, dim)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("embedding file shorter than its 18-byte header", offset=len(data))
    magic, version, count, rows, dim = _HEADER.unpack_from(data)
    if magic != EMBED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBED_MAGIC!r}", offset=0)
    if version != EMBED_VERSION:
        raise FormatError(f"unsupported version {version}, expected {EMBED_VERSION}", offset=4)
    expected = _HEADER.size + 4 * count * rows * dim
    if len(data) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, file has {len(data)}",
            offset=min(len(data), expected),
        )
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return payload.reshape(count, rows, dim).copy()


# ---------------------------------------------------------------------------
# manifest and descriptor

@dataclass
class ManifestRow:
    sample_id: str
    label: int
    split: str = "unassigned"


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "split"])
        for row in rows:
            writer.writerow([row.sample_id, row.label, row.split])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "label", "split"]:
            raise FormatError(f"manifest header {header!r} != ['sample_id', 'label', 'split']", offset=0)
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != 3:
                raise FormatError(f"manifest line {line_no} has {len(record)} fields", offset=0)
            sample_id, label, split = record
            try:
                rows.append(ManifestRow(sample_id, int(label), split))
            except ValueError:
                raise FormatError(f"manifest line {line_no}: non-integer label {label!r}", offset=0) from None
    return rows


_DESCRIPTOR_KEYS = ("c", "d_text", "d_image_raw", "n_regions", "manifest") + MODALITY_NAMES
_DESCRIPTOR_INTS = ("c", "d_text", "d_image_raw", "n_regions")


@dataclass
class DatasetDescriptor:
    """Dimensions plus relative paths to the manifest and embedding files."""

    c: int
    d_text: int
    d_image_raw: int
    n_regions: int
    manifest: str = "manifest.csv"
    title_f: str = "title_f.mmeb"
    title_c: str = "title_c.mmeb"
    desc_f: str = "desc_f.mmeb"
    desc_c: str = "desc_c.mmeb"
    image_regions: str = "image_regions.mmeb"


def write_descriptor(path, desc: DatasetDescriptor, comments: list[str] | None = None) -> None:
    lines = [f"# {comment}" for comment in (comments or [])]
    for key in _DESCRIPTOR_KEYS:
        lines.append(f"{key} = {getattr(desc, key)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptor(path) -> DatasetDescriptor:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _DESCRIPTOR_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown descriptor key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate descriptor key {key!r}")
        values[key] = value.strip()
    missing = [key for key in _DESCRIPTOR_KEYS if key not in values]
    if missing:
        raise ConfigError(f"{path}: missing descriptor keys: {', '.join(missing)}")
    kwargs = {}
    for key, value in values.items():
        if key in _DESCRIPTOR_INTS:
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise ConfigError(f"{path}: descriptor key {key} must be an integer, got {value!r}") from None
        else:
            kwargs[key] = value
    return DatasetDescriptor(**kwargs)


# ---------------------------------------------------------------------------
# loaded dataset

@dataclass
class Dataset:
    """Descriptor + manifest rows + raw per-modality arrays as stored on disk.

    Arrays keep their on-disk (count, rows_per_sample, dim) shapes so
    `validate` can report mismatches; accessors assume a valid dataset.
    """

    desc: DatasetDescriptor
    rows: list[ManifestRow]
    modalities: dict[str, np.ndarray]
    base_dir: Path = field(default_factory=Path)

    @property
    def labels(self) -> np.ndarray:
        return np.array([row.label for row in self.rows], dtype=np.int64)

    def indices(self, split: str) -> list[int]:
        return [i for i, row in enumerate(self.rows) if row.split == split]

    def text(self, name: str) -> np.ndarray:
        return self.modalities[name][:, 0, :]

    @property
    def regions(self) -> np.ndarray:
        return self.modalities["image_regions"]

    def sample(self, i: int) -> ModalitySample:
        row = self.rows[i]
        return ModalitySample(
            sample_id=row.sample_id,
            title_f=self.text("title_f")[i],
            title_c=self.text("title_c")[i],
            desc_f=self.text("desc_f")[i],
            desc_c=self.text("desc_c")[i],
            regions=self.regions[i],
            label=row.label,
        )

    def batch(self, ids: list[int], zeroed: frozenset[str] = frozenset()) -> ModalityBatch:
        """Gather sample rows; modalities named in `zeroed` come back as zeros."""
        masked = expand_mask(zeroed)

        def take(name: str, arr: np.ndarray) -> np.ndarray:
            picked = arr[ids]
            return np.zeros_like(picked) if name in masked else picked

        return ModalityBatch(
            title_f=take("title_f", self.text("title_f")),
            title_c=take("title_c", self.text("title_c")),
            desc_f=take("desc_f", self.text("desc_f")),
            desc_c=take("desc_c", self.text("desc_c")),
            regions=take("image", self.regions),
        )


def expand_mask(mask) -> frozenset[str]:
    """Normalize a unimodal mask: 'text' expands to the four text modalities."""
    expanded: set[str] = set()
    for name in mask:
        if name == "text":
            expanded.update(TEXT_MODALITIES)
        elif name in MASKABLE:
            expanded.add(name)
        else:
            raise ConfigError(f"unknown modality {name!r} in mask (use {sorted(MASKABLE)} or 'text')")
    return frozenset(expanded)


def load_dataset(descriptor_path) -> Dataset:
    """Load descriptor, manifest, and all five embedding files.

    File-level structure is enforced here; cross-file consistency is the
    job of `validate`.
    """
    descriptor_path = Path(descriptor_path)
    desc = read_descriptor(descriptor_path)
    base = descriptor_path.parent
    rows = read_manifest(base / desc.manifest)
    modalities = {name: read_embeddings(base / getattr(desc, name)) for name in MODALITY_NAMES}
    return Dataset(desc=desc, rows=rows, modalities=modalities, base_dir=base)


def save_dataset(out_dir, desc: DatasetDescriptor, rows: list[ManifestRow],
                 modalities: dict[str, np.ndarray], comments: list[str] | None = None) -> Path:
    """Write descriptor + manifest + embedding files; returns the descriptor path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / desc.manifest, rows)
    for name in MODALITY_NAMES:
        write_embeddings(out_dir / getattr(desc, name), modalities[name])
    descriptor_path = out_dir / "dataset.desc"
    write_descriptor(descriptor_path, desc, comments)
    return descriptor_path


# ---------------------------------------------------------------------------
# validation

@dataclass
class Violation:
    sample_id: str | None
    field: str
    message: str

    def __str__(self) -> str:
        where = self.sample_id if self.sample_id is not None else "-"
        return f"{where}: {self.field}: {self.message}"


def validate(dataset: Dataset) -> list[Violation]:
    """Cross-check manifest, descriptor dims, and embedding payloads."""
    violations: list[Violation] = []
    desc = dataset.desc
    n = len(dataset.rows)

    seen: set[str] = set()
    for row in dataset.rows:
        if row.sample_id in seen:
            violations.append(Violation(row.sample_id, "sample_id", "duplicate sample id"))
        seen.add(row.sample_id)
        if not 0 <= row.label < desc.c:
            violations.append(Violation(row.sample_id, "label", f"label {row.label} outside 0..{desc.c - 1}"))
        if row.split not in SPLITS:
            violations.append(Violation(row.sample_id, "split", f"invalid split {row.split!r}"))

    for name in MODALITY_NAMES:
        arr = dataset.modalities[name]
        count, rows_per_sample, dim = arr.shape
        expected_rows = desc.n_regions if name == "image_regions" else 1
        expected_dim = desc.d_image_raw if name == "image_regions" else desc.d_text
        if count != n:
            violations.append(Violation(None, f"{name}.count", f"file has {count} samples, manifest has {n}"))
        if rows_per_sample != expected_rows:
            violations.append(Violation(None, f"{name}.rows_per_sample", f"expected {expected_rows}, got {rows_per_sample}"))
        if dim != expected_dim:
            violations.append(Violation(None, f"{name}.dim", f"expected {expected_dim}, got {dim}"))
        finite = np.isfinite(arr).all(axis=(1, 2))
        for i in np.flatnonzero(~finite):
            sample_id = dataset.rows[i].sample_id if i < n else f"<row {i}>"
            violations.append(Violation(sample_id, f"{name}.values", "non-finite value"))
    return violations


# ---------------------------------------------------------------------------
# stratified splitting

def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def split_dataset(rows: list[ManifestRow], test_fraction: float, seed: int) -> list[ManifestRow]:
    """Assign stratified splits in place and return the rows.

    Per class: round(n * test_fraction) samples to test, then 10% of the
    remainder (rounded) to val, the rest to train, in seeded shuffle order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_class: dict[int, list[int]] = {}
    for i, row in enumerate(rows):
        by_class.setdefault(row.label, []).append(i)
    rng = SeededRng(seed, "split")
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 3:
            raise SplitError(f"class {label} has only {len(members)} samples; need at least 3")
        rng.shuffle(members)
        n_test = _round_half_up(len(members) * test_fraction)
        n_val = _round_half_up((len(members) - n_test) * 0.1)
        for position, i in enumerate(members):
            if position < n_test:
                rows[i].split = "test"
            elif position < n_test + n_val:
                rows[i].split = "val"
            else:
                rows[i].split = "train"
    return rows


# ---------------------------------------------------------------------------
# synthetic benchmark

@dataclass
class SyntheticSpec:
    """A dataset whose text carries only the coarse class factor and whose
    image carries only the fine factor, so each modality alone has a hard
    accuracy ceiling while both together identify the label."""

    n_coarse: int = 9
    n_fine: int = 3
    samples_per_class: int = 50
    noise_sigma: float = 0.1
    d_text: int = 32
    d_image_raw: int = 64
    n_regions: int = 8

    @property
    def n_classes(self) -> int:
        return self.n_coarse * self.n_fine

    def check(self) -> None:
        if self.n_coarse < 1 or self.n_fine < 1 or self.samples_per_class < 1:
            raise ConfigError("synthetic class counts and samples_per_class must be positive")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.d_text < self.n_coarse:
            raise ConfigError(f"d_text {self.d_text} must be >= n_coarse {self.n_coarse}")
        if self.d_image_raw < self.n_fine:
            raise ConfigError(f"d_image_raw {self.d_image_raw} must be >= n_fine {self.n_fine}")
        if self.n_regions < 1:
            raise ConfigError(f"n_regions must be positive, got {self.n_regions}")


def synth_arrays(spec: SyntheticSpec, seed: int) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Generate (modalities, labels) in memory.

    Label y = coarse * n_fine + fine. Every text embedding is
    one-hot(coarse) plus independent Gaussian noise over all dims; every
    region vector is one-hot(fine) plus noise.
    """
    spec.check()
    rng = SeededRng(seed, "synth")
    n = spec.n_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), spec.samples_per_class)
    coarse = labels // spec.n_fine
    fine = labels % spec.n_fine

    text_base = np.zeros((n, spec.d_text), dtype=np.float32)
    text_base[np.arange(n), coarse] = 1.0
    modalities: dict[str, np.ndarray] = {}
    for name in TEXT_MODALITIES:
        noise = rng.normal_array(n * spec.d_text).reshape(n, spec.d_text)
        modalities[name] = (text_base + (noise * spec.noise_sigma).astype(np.float32))[:, None, :]

    region_base = np.zeros((n, spec.n_regions, spec.d_image_raw), dtype=np.float32)
    region_base[np.arange(n), :, fine] = 1.0
    noise = rng.normal_array(n * spec.n_regions * spec.d_image_raw).reshape(region_base.shape)
    modalities["image_regions"] = region_base + (noise * spec.noise_sigma).astype(np.float32)
    return modalities, labels


def synth_generate(spec: SyntheticSpec, seed: int, out_dir) -> Path:
    """Write a synthetic dataset (embedding files, manifest, descriptor);
    returns the descriptor path. Same spec and seed give identical bytes."""
    modalities, labels = synth_arrays(spec, seed)
    rows = [ManifestRow(f"synth-{i:06d}", int(label)) for i, label in enumerate(labels)]
    desc = DatasetDescriptor(
        c=spec.n_classes, d_text=spec.d_text, d_image_raw=spec.d_image_raw, n_regions=spec.n_regions
    )
    comments = [
        f"synthetic benchmark: n_coarse={spec.n_coarse} n_fine={spec.n_fine} "
        f"samples_per_class={spec.samples_per_class} noise_sigma={spec.noise_sigma} seed={seed}"
    ]
    return save_dataset(out_dir, desc, rows, modalities, comments)
