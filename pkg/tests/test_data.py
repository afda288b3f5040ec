import numpy as np
import pytest

from mmfuse.data import (
    DatasetDescriptor,
    ManifestRow,
    SyntheticSpec,
    expand_mask,
    load_dataset,
    read_descriptor,
    read_embeddings,
    read_manifest,
    split_dataset,
    synth_arrays,
    synth_generate,
    validate,
    write_descriptor,
    write_embeddings,
    write_manifest,
)
from mmfuse.errors import ConfigError, FormatError, SplitError
from mmfuse.rng import SeededRng


def random_block(seed, count, rows, dim):
    values = SeededRng(seed, "block").normal_array(count * rows * dim)
    return values.reshape(count, rows, dim).astype(np.float32)


# ---------------------------------------------------------------------------
# embedding container

def test_embeddings_round_trip_bitwise(tmp_path):
    arr = random_block(0, 10, 1, 8)
    path = tmp_path / "t.mmeb"
    write_embeddings(path, arr)
    back = read_embeddings(path)
    assert back.shape == (10, 1, 8)
    assert back.tobytes() == arr.tobytes()


def test_embeddings_2d_input_gets_one_row_per_sample(tmp_path):
    arr = random_block(1, 4, 1, 6)[:, 0, :]
    path = tmp_path / "t.mmeb"
    write_embeddings(path, arr)
    assert read_embeddings(path).shape == (4, 1, 6)


def test_empty_file_is_just_a_header(tmp_path):
    path = tmp_path / "empty.mmeb"
    write_embeddings(path, np.zeros((0, 1, 8), dtype=np.float32))
    assert path.stat().st_size == 18
    assert read_embeddings(path).shape == (0, 1, 8)


def test_truncated_payload_reports_exact_offset(tmp_path):
    arr = random_block(2, 3, 2, 4)
    path = tmp_path / "t.mmeb"
    write_embeddings(path, arr)
    payload_bytes = 4 * 3 * 2 * 4
    data = path.read_bytes()
    path.write_bytes(data[:-1])
    with pytest.raises(FormatError) as err:
        read_embeddings(path)
    assert err.value.offset == 18 + payload_bytes - 1


def test_oversized_payload_reports_expected_end(tmp_path):
    arr = random_block(3, 2, 1, 4)
    path = tmp_path / "t.mmeb"
    write_embeddings(path, arr)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError) as err:
        read_embeddings(path)
    assert err.value.offset == 18 + 4 * 2 * 4


def test_bad_magic_and_version_offsets(tmp_path):
    arr = random_block(4, 1, 1, 2)
    path = tmp_path / "t.mmeb"
    write_embeddings(path, arr)
    data = bytearray(path.read_bytes())

    corrupt = tmp_path / "magic.mmeb"
    corrupt.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(FormatError) as err:
        read_embeddings(corrupt)
    assert err.value.offset == 0

    corrupt = tmp_path / "version.mmeb"
    corrupt.write_bytes(bytes(data[:4]) + b"\x02\x00" + bytes(data[6:]))
    with pytest.raises(FormatError) as err:
        read_embeddings(corrupt)
    assert err.value.offset == 4


def test_short_header_rejected(tmp_path):
    path = tmp_path / "short.mmeb"
    path.write_bytes(b"MMEB\x01")
    with pytest.raises(FormatError) as err:
        read_embeddings(path)
    assert err.value.offset == 5  # where the 18-byte header ran out


# ---------------------------------------------------------------------------
# manifest and descriptor

def test_manifest_round_trip(tmp_path):
    rows = [ManifestRow("a", 0, "train"), ManifestRow("b", 2, "unassigned")]
    path = tmp_path / "manifest.csv"
    write_manifest(path, rows)
    assert path.read_text().splitlines()[0] == "sample_id,label,split"
    assert read_manifest(path) == rows


def test_manifest_rejects_wrong_header(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("id,label\nx,0\n")
    with pytest.raises(FormatError):
        read_manifest(path)


def test_descriptor_round_trip_with_comments(tmp_path):
    desc = DatasetDescriptor(c=27, d_text=32, d_image_raw=64, n_regions=8)
    path = tmp_path / "dataset.desc"
    write_descriptor(path, desc, comments=["generated for a unit test"])
    assert read_descriptor(path) == desc


def test_descriptor_rejects_unknown_key(tmp_path):
    desc = DatasetDescriptor(c=2, d_text=4, d_image_raw=8, n_regions=2)
    path = tmp_path / "dataset.desc"
    write_descriptor(path, desc)
    path.write_text(path.read_text() + "mystery = 1\n")
    with pytest.raises(ConfigError, match="mystery"):
        read_descriptor(path)


def test_descriptor_rejects_missing_key(tmp_path):
    path = tmp_path / "dataset.desc"
    path.write_text("c = 2\n")
    with pytest.raises(ConfigError, match="missing"):
        read_descriptor(path)


# ---------------------------------------------------------------------------
# splits

def rows_for(classes):
    rows = []
    for label, count in classes.items():
        rows.extend(ManifestRow(f"c{label}-{i}", label) for i in range(count))
    return rows


def test_split_single_class_arithmetic():
    rows = rows_for({0: 100})
    split_dataset(rows, 0.1, seed=0)
    counts = {name: sum(r.split == name for r in rows) for name in ("test", "val", "train")}
    assert counts == {"test": 10, "val": 9, "train": 81}


def test_split_27_classes_both_fractions():
    for fraction, expected in ((0.1, (10, 9, 81)), (0.2, (20, 8, 72))):
        rows = rows_for({label: 100 for label in range(27)})
        split_dataset(rows, fraction, seed=3)
        for label in range(27):
            members = [r for r in rows if r.label == label]
            got = (
                sum(r.split == "test" for r in members),
                sum(r.split == "val" for r in members),
                sum(r.split == "train" for r in members),
            )
            assert got == expected, (fraction, label)


def test_split_is_deterministic_and_exhaustive():
    rows_a = rows_for({0: 57, 1: 23, 2: 40})
    rows_b = rows_for({0: 57, 1: 23, 2: 40})
    split_dataset(rows_a, 0.2, seed=9)
    split_dataset(rows_b, 0.2, seed=9)
    assert [r.split for r in rows_a] == [r.split for r in rows_b]
    assert all(r.split in ("train", "val", "test") for r in rows_a)
    # a different seed moves samples around
    rows_c = rows_for({0: 57, 1: 23, 2: 40})
    split_dataset(rows_c, 0.2, seed=10)
    assert [r.split for r in rows_a] != [r.split for r in rows_c]


def test_split_counts_match_rule_for_many_sizes():
    # brute-force check of the per-class arithmetic
    for n in range(3, 120):
        rows = rows_for({0: n})
        split_dataset(rows, 0.1, seed=n)
        n_test = int(np.floor(n * 0.1 + 0.5))
        n_val = int(np.floor((n - n_test) * 0.1 + 0.5))
        counts = {name: sum(r.split == name for r in rows) for name in ("test", "val", "train")}
        assert counts == {"test": n_test, "val": n_val, "train": n - n_test - n_val}


def test_split_rejects_tiny_class():
    rows = rows_for({0: 10, 5: 2})
    with pytest.raises(SplitError, match="class 5"):
        split_dataset(rows, 0.1, seed=0)


def test_split_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        split_dataset(rows_for({0: 10}), 0.0, seed=0)


# ---------------------------------------------------------------------------
# synthetic benchmark

def test_synth_sigma_zero_is_exact_pattern():
    spec = SyntheticSpec(n_coarse=4, n_fine=2, samples_per_class=3, noise_sigma=0.0,
                         d_text=8, d_image_raw=8, n_regions=2)
    modalities, labels = synth_arrays(spec, seed=0)
    for i, label in enumerate(labels):
        coarse, fine = divmod(int(label), 2)
        text = modalities["title_f"][i, 0]
        assert np.flatnonzero(text).tolist() == [coarse]
        assert text[coarse] == 1.0
        for region in modalities["image_regions"][i]:
            assert np.flatnonzero(region).tolist() == [fine]


def test_synth_counts_and_label_order():
    spec = SyntheticSpec(n_coarse=9, n_fine=3, samples_per_class=50)
    modalities, labels = synth_arrays(spec, seed=1)
    assert labels.shape == (1350,)
    assert sorted(set(labels.tolist())) == list(range(27))
    assert modalities["image_regions"].shape == (1350, 8, 64)
    assert all(modalities[m].shape == (1350, 1, 32) for m in
               ("title_f", "title_c", "desc_f", "desc_c"))


def test_synth_text_modalities_get_independent_noise():
    spec = SyntheticSpec(n_coarse=2, n_fine=2, samples_per_class=4, noise_sigma=0.1,
                         d_text=4, d_image_raw=4, n_regions=2)
    modalities, _ = synth_arrays(spec, seed=2)
    assert not np.array_equal(modalities["title_f"], modalities["title_c"])
    assert not np.array_equal(modalities["desc_f"], modalities["desc_c"])


def test_synth_generate_is_byte_identical_per_seed(tmp_path):
    spec = SyntheticSpec(n_coarse=3, n_fine=2, samples_per_class=4,
                         d_text=8, d_image_raw=8, n_regions=2)
    desc_a = synth_generate(spec, seed=5, out_dir=tmp_path / "a")
    desc_b = synth_generate(spec, seed=5, out_dir=tmp_path / "b")
    for name in ("dataset.desc", "manifest.csv", "title_f.mmeb", "title_c.mmeb",
                 "desc_f.mmeb", "desc_c.mmeb", "image_regions.mmeb"):
        assert (desc_a.parent / name).read_bytes() == (desc_b.parent / name).read_bytes(), name
    desc_c = synth_generate(spec, seed=6, out_dir=tmp_path / "c")
    assert (desc_a.parent / "title_f.mmeb").read_bytes() != (desc_c.parent / "title_f.mmeb").read_bytes()


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(n_coarse=9, d_text=4).check()  # d_text < n_coarse
    with pytest.raises(ConfigError):
        SyntheticSpec(noise_sigma=-1.0).check()
    with pytest.raises(ConfigError):
        SyntheticSpec(n_fine=8, d_image_raw=4).check()


def test_synthetic_ceilings_nearest_pattern_oracle(tmp_path):
    # brute-force nearest-pattern classification against the class prototypes:
    # text alone caps near 1/n_fine, image alone near 1/n_coarse, both ~1
    spec = SyntheticSpec()  # 9 x 3, 50 per class, sigma 0.1
    text_accs, image_accs, both_accs = [], [], []
    for seed in (0, 1, 2):
        modalities, labels = synth_arrays(spec, seed)
        n = labels.size
        text = np.zeros((n, spec.d_text), dtype=np.float64)
        for name in ("title_f", "title_c", "desc_f", "desc_c"):
            text += modalities[name][:, 0, :]
        text /= 4
        image = modalities["image_regions"].mean(axis=1)

        prototypes_text = np.zeros((spec.n_classes, spec.d_text))
        prototypes_image = np.zeros((spec.n_classes, spec.d_image_raw))
        for label in range(spec.n_classes):
            coarse, fine = divmod(label, spec.n_fine)
            prototypes_text[label, coarse] = 1.0
            prototypes_image[label, fine] = 1.0

        def nearest(features, prototypes):
            dist = ((features[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=2)
            return dist.argmin(axis=1)

        text_accs.append(np.mean(nearest(text, prototypes_text) == labels))
        image_accs.append(np.mean(nearest(image, prototypes_image) == labels))
        both = np.concatenate([text, image], axis=1)
        prototypes_both = np.concatenate([prototypes_text, prototypes_image], axis=1)
        both_accs.append(np.mean(nearest(both, prototypes_both) == labels))

    assert np.mean(text_accs) <= 1 / spec.n_fine + 0.05
    assert np.mean(image_accs) <= 1 / spec.n_coarse + 0.05
    assert np.mean(both_accs) >= 0.99


# ---------------------------------------------------------------------------
# validation

def small_dataset(tmp_path, **spec_kwargs):
    defaults = dict(n_coarse=2, n_fine=2, samples_per_class=4,
                    d_text=6, d_image_raw=8, n_regions=2)
    defaults.update(spec_kwargs)
    descriptor = synth_generate(SyntheticSpec(**defaults), seed=0, out_dir=tmp_path / "ds")
    return load_dataset(descriptor)


def test_validate_clean_dataset(tmp_path):
    assert validate(small_dataset(tmp_path)) == []


def test_validate_flags_label_out_of_range(tmp_path):
    ds = small_dataset(tmp_path)
    ds.rows[3].label = ds.desc.c
    violations = validate(ds)
    assert any(v.field == "label" and v.sample_id == ds.rows[3].sample_id for v in violations)


def test_validate_flags_dim_mismatch(tmp_path):
    ds = small_dataset(tmp_path)
    ds.modalities["title_f"] = ds.modalities["title_f"][:, :, :4]
    violations = validate(ds)
    assert any(v.field == "title_f.dim" for v in violations)


def test_validate_flags_count_rows_split_and_nonfinite(tmp_path):
    ds = small_dataset(tmp_path)
    ds.modalities["desc_c"] = ds.modalities["desc_c"][:-1]
    ds.modalities["image_regions"] = ds.modalities["image_regions"][:, :1, :]
    ds.modalities["title_c"][2, 0, 0] = np.nan
    ds.rows[0].split = "holdout"
    ds.rows[1].sample_id = ds.rows[2].sample_id
    fields = {v.field for v in validate(ds)}
    assert {"desc_c.count", "image_regions.rows_per_sample", "title_c.values",
            "split", "sample_id"} <= fields


def test_expand_mask():
    assert expand_mask({"text"}) == frozenset({"title_f", "title_c", "desc_f", "desc_c"})
    assert expand_mask({"image", "title_f"}) == frozenset({"image", "title_f"})
    with pytest.raises(ConfigError):
        expand_mask({"audio"})


def test_dataset_batch_masking(tmp_path):
    ds = small_dataset(tmp_path)
    batch = ds.batch([0, 1], frozenset({"text"}))
    assert not batch.title_f.any() and not batch.desc_c.any()
    assert batch.regions.any()
    batch = ds.batch([0, 1], frozenset({"image"}))
    assert not batch.regions.any()
    assert batch.title_f.any()
