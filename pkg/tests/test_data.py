import numpy as np
import pytest
from PIL import Image

from hqnn.data import (
    DatasetManifest,
    IMAGENET_MEAN,
    IMAGENET_STD,
    augment,
    batch_iter,
    bilinear_resize,
    build_manifest,
    denormalize,
    load_and_preprocess,
    load_image_01,
    normalize,
    stratified_split,
    synth_dataset,
    synth_image,
)
from hqnn.errors import ConfigError, ContractError, DataError
from hqnn.rng import STREAM_SYNTH, make_rng

from oracles import bilinear_loops


def write_png(path, arr01):
    """arr01: (3,H,W) floats in [0,1]."""
    img = np.round(np.asarray(arr01) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(img).save(path)


class TestPreprocess:
    def test_mean_cancellation(self, tmp_path):
        p = tmp_path / "red.png"
        arr = np.zeros((3, 64, 64))
        arr[0] = 0.485  # the red-channel ImageNet mean
        write_png(p, arr)
        out = load_and_preprocess(p)
        assert np.abs(out[0]).max() <= 0.01  # 8-bit quantization of 0.485

    def test_unit_green_value(self, tmp_path):
        p = tmp_path / "green.png"
        arr = np.zeros((3, 64, 64))
        arr[1] = 1.0
        write_png(p, arr)
        out = load_and_preprocess(p)
        expected = (1.0 - 0.456) / 0.224
        assert np.abs(out[1] - expected).max() <= 1e-9
        assert abs(expected - 2.4286) <= 1e-4

    def test_resize_against_loop_oracle(self, rng):
        img = rng.uniform(0, 255, size=(3, 9, 7))
        assert np.abs(bilinear_resize(img, 4, 5) - bilinear_loops(img, 4, 5)).max() <= 1e-6

    def test_large_resize_against_loop_oracle(self, rng):
        img = rng.uniform(0, 255, size=(1, 480, 640))
        got = bilinear_resize(img, 64, 64)
        assert got.shape == (1, 64, 64)
        assert np.abs(got - bilinear_loops(img, 64, 64)).max() <= 1e-6

    def test_resize_happens_for_nonsquare_input(self, tmp_path, rng):
        p = tmp_path / "big.png"
        arr = rng.uniform(0, 1, size=(3, 480, 640))
        write_png(p, arr)
        assert load_and_preprocess(p).shape == (3, 64, 64)

    def test_unreadable_file_names_path(self, tmp_path):
        p = tmp_path / "broken.png"
        p.write_bytes(b"not a png")
        with pytest.raises(DataError, match="broken.png"):
            load_and_preprocess(p)

    def test_normalize_roundtrip(self, rng):
        x = rng.uniform(0, 1, size=(3, 8, 8))
        assert np.abs(denormalize(normalize(x)) - x).max() <= 1e-12


class TestAugment:
    def force_rng(self, flip, angle, brightness, contrast):
        """Generator whose first four draws produce the given transforms."""
        class Fixed:
            def __init__(self):
                self.calls = 0

            def random(self):
                return 0.9 if not flip else 0.1

            def uniform(self, lo, hi):
                self.calls += 1
                return {1: angle, 2: brightness, 3: contrast}[self.calls]

        return Fixed()

    def test_identity_transforms(self, rng):
        x = rng.uniform(0.2, 0.8, size=(3, 64, 64))
        out = augment(x, self.force_rng(False, 0.0, 1.0, 1.0))
        assert np.abs(out - x).max() <= 1e-12

    def test_flip_is_involution(self, rng):
        x = rng.uniform(0.2, 0.8, size=(3, 64, 64))
        once = augment(x, self.force_rng(True, 0.0, 1.0, 1.0))
        twice = augment(once, self.force_rng(True, 0.0, 1.0, 1.0))
        assert np.abs(twice - x).max() <= 1e-12

    def test_brightness_scaling(self):
        x = np.full((3, 64, 64), 0.5)
        out = augment(x, self.force_rng(False, 0.0, 1.2, 1.0))
        assert np.abs(out - 0.6).max() <= 1e-12

    def test_contrast_no_op_on_constant_image(self):
        x = np.full((3, 64, 64), 0.4)
        out = augment(x, self.force_rng(False, 0.0, 1.0, 1.3))
        assert np.abs(out - 0.4).max() <= 1e-12

    def test_val_sample_rejected(self, rng):
        with pytest.raises(ContractError):
            augment(np.zeros((3, 64, 64)), rng, split="val")

    def test_deterministic_under_rng_state(self, rng):
        x = rng.uniform(0, 1, size=(3, 64, 64))
        a = augment(x, make_rng(5, 4, 1, 2))
        b = augment(x, make_rng(5, 4, 1, 2))
        assert np.array_equal(a, b)


class TestStratifiedSplit:
    def test_paper_counts(self):
        labels = [0] * 132 + [1] * 130
        split = stratified_split(labels, seed=42)
        train = [s == "train" for s in split]
        assert sum(train[:132]) == 105
        assert sum(train[132:]) == 104
        assert split.count("val") == 27 + 26

    def test_exact_ratio(self):
        split = stratified_split([0] * 10 + [1] * 10, seed=0)
        assert split.count("train") == 16
        assert split[:10].count("train") == 8

    def test_determinism_and_seed_sensitivity(self):
        labels = [0] * 40 + [1] * 40
        a = stratified_split(labels, seed=7)
        b = stratified_split(labels, seed=7)
        c = stratified_split(labels, seed=8)
        assert a == b
        assert a != c
        assert a.count("train") == c.count("train")

    def test_small_class_rejected(self):
        with pytest.raises(DataError):
            stratified_split([0, 1, 1, 1], seed=0)


class TestSynthDataset:
    def test_counts_and_manifest(self, tmp_path):
        manifest = synth_dataset(tmp_path / "d", n_per_class=6, seed=42)
        assert len(manifest.records) == 12
        labels = [r.label for r in manifest.records]
        assert labels.count(0) == 6 and labels.count(1) == 6
        assert (tmp_path / "d" / "manifest.tsv").is_file()
        assert len(list((tmp_path / "d" / "normal").glob("*.png"))) == 6

    def test_below_minimum_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_dataset(tmp_path / "d", n_per_class=2, seed=42)

    def test_regeneration_is_bit_identical(self, tmp_path):
        m1 = synth_dataset(tmp_path / "a", n_per_class=4, seed=9)
        m2 = synth_dataset(tmp_path / "b", n_per_class=4, seed=9)
        for r1, r2 in zip(m1.records, m2.records):
            b1 = (tmp_path / "a" / r1.path).read_bytes()
            b2 = (tmp_path / "b" / r2.path).read_bytes()
            assert b1 == b2

    def test_hotspots_brighter_than_matched_regions(self):
        size = 64
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        wins = 0
        n = 40
        for i in range(n):
            img1, spots = synth_image(make_rng(3, STREAM_SYNTH, 0, 1000 + i), 1)
            img0, _ = synth_image(make_rng(3, STREAM_SYNTH, 0, 2000 + i), 0)
            mask = np.zeros((size, size), dtype=bool)
            for sy, sx, rad in spots:
                mask |= (yy - sy) ** 2 + (xx - sx) ** 2 <= rad**2
            if img1[0][mask].mean() > img0[0][mask].mean():
                wins += 1
        assert wins >= 0.95 * n

    def test_manifest_roundtrip(self, tmp_path):
        m = synth_dataset(tmp_path / "d", n_per_class=4, seed=1)
        loaded = DatasetManifest.load(tmp_path / "d" / "manifest.tsv")
        assert loaded.seed == 1
        assert [(r.path, r.label, r.split) for r in loaded.records] == [
            (r.path, r.label, r.split) for r in m.records
        ]


class TestBuildManifest:
    def test_scans_layout(self, tiny_dataset):
        rebuilt = build_manifest(tiny_dataset.root, seed=42)
        assert [(r.path, r.label, r.split) for r in rebuilt.records] == [
            (r.path, r.label, r.split) for r in tiny_dataset.records
        ]

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError):
            build_manifest(tmp_path / "nope", seed=0)

    def test_no_split_overlap(self, tiny_dataset):
        seen = {}
        for r in tiny_dataset.records:
            assert r.path not in seen
            seen[r.path] = r.split


class TestBatchIter:
    def test_batch_count_209(self):
        # 209 train records -> 14 batches (13 x 16 + 1 x 1)
        records = [None] * 209
        sizes = [len(records[i : i + 16]) for i in range(0, 209, 16)]
        assert len(sizes) == 14 and sizes[-1] == 1

    def test_no_shuffle_preserves_manifest_order(self, tiny_dataset):
        idx = tiny_dataset.split_indices("train")
        seen = []
        for pixels, labels in batch_iter(tiny_dataset, "train", batch_size=4):
            seen.extend(labels.tolist())
        expected = [tiny_dataset.records[i].label for i in idx]
        assert seen == expected

    def test_epoch_coverage_under_shuffle(self, tiny_dataset):
        rng = make_rng(1, 3)
        total = []
        for pixels, labels in batch_iter(tiny_dataset, "train", batch_size=3,
                                         shuffle=True, rng=rng):
            total.append(pixels.shape[0])
        assert sum(total) == len(tiny_dataset.split_indices("train"))

    def test_empty_split_rejected(self, tiny_dataset):
        with pytest.raises(DataError):
            next(batch_iter(tiny_dataset, "test"))

    def test_batch_shapes_and_normalization(self, tiny_dataset):
        pixels, labels = next(batch_iter(tiny_dataset, "val", batch_size=2))
        assert pixels.shape == (2, 3, 64, 64)
        # normalized values should be roughly centered
        assert np.abs(pixels.data).max() < 5.0

    def test_augmented_batches_deterministic(self, tiny_dataset):
        a = [p.data for p, _ in batch_iter(tiny_dataset, "train", 4,
                                           augment_train=True, aug_seed=3, epoch=1)]
        b = [p.data for p, _ in batch_iter(tiny_dataset, "train", 4,
                                           augment_train=True, aug_seed=3, epoch=1)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        c = [p.data for p, _ in batch_iter(tiny_dataset, "train", 4,
                                           augment_train=True, aug_seed=3, epoch=2)]
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))
