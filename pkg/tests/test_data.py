import json
import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_rocket import data
from spectral_rocket.data import (
    DatasetManifest,
    FormatError,
    HyperspectralCube,
    ImageEntry,
    SchemaError,
    batch_iterator,
    extract_labeled_pixels,
    load_cube,
    preprocess,
    sample_share,
    write_cube,
)
from spectral_rocket.synthetic import make_dataset


def manifest(b=3, c=2, band_drop=(), ignore=None, **kw):
    return DatasetManifest(
        name="t",
        band_count=b,
        class_count=c,
        class_names=[f"c{i}" for i in range(c)],
        images=[ImageEntry("a", "a", "train")],
        band_drop=list(band_drop),
        ignore_label=ignore,
        **kw,
    )


def cube_of(values, labels=None):
    values = np.asarray(values, dtype=np.float32)
    if labels is None:
        labels = np.zeros(values.shape[:2], dtype=np.uint8)
    return HyperspectralCube(values, np.asarray(labels, dtype=np.uint8), "a")


class TestManifest:
    def test_bad_split_rejected(self):
        with pytest.raises(SchemaError):
            DatasetManifest("t", 3, 1, ["x"], [ImageEntry("a", "a", "holdout")])

    def test_band_drop_validated(self):
        with pytest.raises(SchemaError):
            manifest(band_drop=[0, 0])
        with pytest.raises(SchemaError):
            manifest(band_drop=[3])

    def test_class_names_length(self):
        with pytest.raises(SchemaError):
            DatasetManifest("t", 3, 2, ["x"], [])

    def test_json_round_trip(self, tmp_path):
        m = manifest(b=5, band_drop=[1], ignore=255, norm_min=[0, 0, 0, 0], norm_max=[1, 2, 3, 4])
        data.save_manifest(m, tmp_path / "m.json")
        back = data.load_manifest(tmp_path / "m.json")
        assert back.to_dict() == m.to_dict()


class TestCubeIO:
    def test_identity_read_back(self, tmp_path):
        vals = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        write_cube(cube_of(vals), tmp_path / "a")
        cube = load_cube(tmp_path / "a", manifest())
        assert cube.values[0, 0].tolist() == [0, 1, 2]
        assert cube.values.tolist() == vals.tolist()

    def test_band_mismatch_is_schema_error(self, tmp_path):
        write_cube(cube_of(np.zeros((2, 2, 120))), tmp_path / "a")
        with pytest.raises(SchemaError):
            load_cube(tmp_path / "a", manifest(b=25))

    def test_malformed_header(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "meta.json").write_text("{not json")
        with pytest.raises(FormatError):
            load_cube(tmp_path / "a", manifest())

    def test_truncated_payload(self, tmp_path):
        write_cube(cube_of(np.zeros((2, 2, 3))), tmp_path / "a")
        p = tmp_path / "a" / "values.bin"
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_cube(tmp_path / "a", manifest())

    def test_labels_out_of_range(self, tmp_path):
        write_cube(cube_of(np.zeros((1, 2, 3)), [[0, 7]]), tmp_path / "a")
        with pytest.raises(SchemaError):
            load_cube(tmp_path / "a", manifest())

    def test_byte_layout(self, tmp_path):
        vals = np.array([[[1.5, -2.0]]], dtype=np.float32)
        write_cube(cube_of(vals, [[1]]), tmp_path / "a")
        assert (tmp_path / "a" / "values.bin").read_bytes() == bytes.fromhex("0000c03f000000c0")
        assert (tmp_path / "a" / "labels.bin").read_bytes() == b"\x01"
        meta = json.loads((tmp_path / "a" / "meta.json").read_text())
        assert (meta["height"], meta["width"], meta["bands"]) == (1, 1, 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_round_trip_byte_identical(self, tmp_path_factory, h, w, b, seed):
        rng = np.random.default_rng(seed)
        src = tmp_path_factory.mktemp("src")
        dst = tmp_path_factory.mktemp("dst")
        cube = cube_of(rng.normal(size=(h, w, b)) * 1000, rng.integers(0, 2, (h, w)))
        write_cube(cube, src)
        write_cube(load_cube(src, manifest(b=b)), dst)
        for name in ("meta.json", "values.bin", "labels.bin"):
            assert (src / name).read_bytes() == (dst / name).read_bytes()


class TestPreprocess:
    def test_min_max_endpoints(self):
        vals = np.array([[[0.0, 4000.0], [1000.0, 2000.0]]])
        out = preprocess(cube_of(vals), manifest(b=2))
        assert out.values.min() == 0.0 and out.values.max() == 1.0
        assert ((0 <= out.values) & (out.values <= 1)).all()

    def test_drops_eight_of_120_bands(self):
        vals = np.random.default_rng(0).random((2, 2, 120))
        out = preprocess(cube_of(vals), manifest(b=120, band_drop=range(0, 120, 15)))
        assert out.bands == 112

    def test_constant_band_maps_to_zero_with_warning(self, caplog):
        vals = np.stack([np.full((2, 2), 7.0), np.arange(4.0).reshape(2, 2)], axis=-1)
        with caplog.at_level(logging.WARNING):
            out = preprocess(cube_of(vals), manifest(b=2))
        assert (out.values[..., 0] == 0).all()
        assert "degenerate" in caplog.text

    def test_persisted_bounds_clamp(self):
        m = manifest(b=1, norm_min=[0.0], norm_max=[10.0])
        out = preprocess(cube_of([[[-5.0], [5.0], [20.0]]]), m)
        assert out.values.ravel().tolist() == [0.0, 0.5, 1.0]

    def test_labels_unchanged(self):
        labels = [[0, 1], [1, 0]]
        out = preprocess(cube_of(np.random.default_rng(1).random((2, 2, 3)), labels), manifest())
        assert out.labels.tolist() == labels

    def test_idempotent(self):
        m = manifest(b=4, band_drop=[2], norm_min=[0, 0, 0], norm_max=[3, 3, 3])
        once = preprocess(cube_of(np.random.default_rng(2).random((3, 3, 4)) * 3), m)
        twice = preprocess(once, m)
        assert np.array_equal(once.values, twice.values)

    def test_train_split_bounds(self, tmp_path):
        path = make_dataset(tmp_path, splits={"train": 2, "val": 1, "test": 1})
        m = data.fit_normalization(data.load_manifest(path))
        train = data.load_pixels(m, m.split_ids("train"))
        assert train.spectra.min() == 0.0 and train.spectra.max() == 1.0


class TestPixels:
    def test_ignore_label_skipped(self):
        c = cube_of(np.zeros((2, 2, 3)), [[0, 255], [1, 1]])
        assert len(extract_labeled_pixels(c, 255)) == 3

    def test_all_ignored(self):
        c = cube_of(np.zeros((2, 2, 3)), [[255, 255], [255, 255]])
        assert len(extract_labeled_pixels(c, 255)) == 0

    def test_row_major_order(self):
        vals = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        px = extract_labeled_pixels(cube_of(vals, [[0, 1], [1, 0]]))
        assert [s.spectrum[0] for s in px] == [0, 3, 6, 9]
        assert [s.label for s in px] == [0, 1, 1, 0]

    def test_count_matches_histogram(self):
        rng = np.random.default_rng(3)
        labels = rng.choice([0, 1, 2, 255], size=(9, 7))
        px = extract_labeled_pixels(cube_of(rng.random((9, 7, 4)), labels), 255)
        hist = Counter(labels.ravel().tolist())
        hist.pop(255, None)
        assert Counter(px.labels.tolist()) == hist
        assert all(s.label != 255 for s in px)


class TestShares:
    def test_full_share(self):
        ids = [f"i{k}" for k in range(29)]
        assert sample_share(ids, 100, seed=3) == ids

    @pytest.mark.parametrize("seed", [0, 1, 7])
    def test_floor_case(self, seed):
        assert len(sample_share([f"i{k}" for k in range(20)], 5, seed)) == 1

    def test_nested_chain(self):
        ids = [f"i{k}" for k in range(29)]
        picks = [set(sample_share(ids, p, 42)) for p in data.SHARES]
        for small, big in zip(picks, picks[1:]):
            assert small <= big

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sample_share([], 50, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.integers(0, 10_000))
    def test_nested_property(self, n, seed):
        ids = list(range(n))
        prev = set()
        for p in data.SHARES:
            cur = set(sample_share(ids, p, seed))
            assert prev <= cur
            prev = cur
        assert prev == set(ids)


class TestBatches:
    def px(self, n):
        return data.PixelSet(np.arange(n, dtype=float)[:, None], np.zeros(n, dtype=int))

    def test_partition_sizes(self):
        sizes = [len(b) for b in batch_iterator(self.px(10), 4, seed=0)]
        assert sizes == [4, 4, 2]

    def test_deterministic(self):
        a = [b.spectra.ravel().tolist() for b in batch_iterator(self.px(50), 8, seed=5, epoch=2)]
        b = [b.spectra.ravel().tolist() for b in batch_iterator(self.px(50), 8, seed=5, epoch=2)]
        assert a == b

    def test_epochs_differ(self):
        a = next(batch_iterator(self.px(50), 50, seed=5, epoch=0)).spectra.ravel()
        b = next(batch_iterator(self.px(50), 50, seed=5, epoch=1)).spectra.ravel()
        assert not np.array_equal(a, b)

    def test_unshuffled(self):
        batches = list(batch_iterator(self.px(5), 2, shuffle=False))
        assert np.concatenate([b.spectra.ravel() for b in batches]).tolist() == [0, 1, 2, 3, 4]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 200), st.integers(1, 64), st.integers(0, 1000))
    def test_union_is_input_multiset(self, n, bs, seed):
        values = np.random.default_rng(seed).integers(0, 5, n)
        px = data.PixelSet(values[:, None].astype(float), np.zeros(n, dtype=int))
        got = Counter()
        for b in batch_iterator(px, bs, seed=seed):
            assert 1 <= len(b) <= bs
            got.update(b.spectra.ravel().tolist())
        assert got == Counter(values.astype(float).tolist())

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            list(batch_iterator(self.px(3), 0))


def test_missing_images_skipped(tmp_path, caplog):
    path = make_dataset(tmp_path, splits={"train": 3, "val": 1, "test": 1})
    m = data.load_manifest(path)
    import shutil

    shutil.rmtree(tmp_path / "img001")
    with caplog.at_level(logging.WARNING):
        ids = data.available_images(m, "train")
    assert ids == ["img000", "img002"]
    assert "img001" in caplog.text


def test_split_pixel_sets_disjoint(tmp_path):
    path = make_dataset(tmp_path)
    m = data.fit_normalization(data.load_manifest(path))
    sets = {s: data.load_pixels(m, m.split_ids(s)) for s in data.SPLITS}
    owners = {s: set(px.image_ids.tolist()) for s, px in sets.items()}
    assert not owners["train"] & owners["val"]
    assert not owners["train"] & owners["test"]
    assert not owners["val"] & owners["test"]
