"""Synthetic dataset generator and augmentation tests."""

import hashlib
import pathlib

import numpy as np
import pytest

from triseg import data as D
from triseg import edges
from triseg.errors import DataError, MissingInputError, ParameterError


def tiny_spec(**kwargs):
    defaults = dict(train_images=3, val_images=2, test_images=1, size=48, num_classes=4, seed=9)
    defaults.update(kwargs)
    return D.DatasetSpec(**defaults)


def dir_digest(root):
    h = hashlib.sha256()
    for path in sorted(pathlib.Path(root).rglob("*")):
        if path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


class TestSpecValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"train_images": -1},
            {"size": 0},
            {"num_classes": 1},
            {"num_classes": 9},  # beyond the palette
            {"noise_sigma": -0.1},
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ParameterError):
            tiny_spec(**kwargs)


class TestPnmRoundTrip:
    def test_ppm_image_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float64) / 255.0
        path = tmp_path / "img.ppm"
        D.write_ppm(path, image)
        back = D.read_ppm(path)
        assert back.shape == (3, 5, 7)
        assert np.array_equal(np.rint(back * 255), np.rint(image * 255))

    def test_pgm_label_roundtrip(self, tmp_path):
        labels = np.array([[0, 1, 255], [3, 2, 0]], dtype=np.int64)
        path = tmp_path / "lab.pgm"
        D.write_pgm(path, labels)
        assert np.array_equal(D.read_pgm(path), labels)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 1, 2, 3]))
        assert np.array_equal(D.read_pgm(path), [[0, 1], [2, 3]])

    def test_truncated_raster_raises(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(DataError):
            D.read_pgm(path)

    def test_wrong_magic_raises(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(DataError):
            D.read_ppm(path)


class TestGeneration:
    def test_counts_and_manifest(self, tmp_path):
        spec = tiny_spec()
        D.generate(spec, tmp_path)
        assert len(list(tmp_path.glob("train/img_*.ppm"))) == 3
        assert len(list(tmp_path.glob("val/lab_*.pgm"))) == 2
        assert len(list(tmp_path.glob("test/img_*.ppm"))) == 1
        for split in D.SPLITS:
            assert (tmp_path / f"{split}.json").exists()

    def test_same_seed_is_byte_identical(self, tmp_path):
        D.generate(tiny_spec(), tmp_path / "a")
        D.generate(tiny_spec(), tmp_path / "b")
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        D.generate(tiny_spec(), tmp_path / "a")
        D.generate(tiny_spec(seed=10), tmp_path / "b")
        assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "b")

    def test_splits_are_disjoint(self):
        spec = tiny_spec()
        train0 = D.make_sample(spec, "train", 0)
        val0 = D.make_sample(spec, "val", 0)
        assert not np.array_equal(train0.labels, val0.labels)

    def test_every_class_present_with_minimum_area(self):
        spec = tiny_spec(train_images=8, size=64)
        for i in range(8):
            sample = D.make_sample(spec, "train", i)
            counts = np.bincount(sample.labels.ravel(), minlength=4)
            assert counts[0] > 0.5 * 64 * 64  # background majority
            for k in range(1, 4):
                assert counts[k] >= 20

    def test_images_are_finite_unit_range(self):
        sample = D.make_sample(tiny_spec(), "train", 0)
        assert sample.image.shape == (3, 48, 48)
        assert np.isfinite(sample.image).all()
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0

    def test_generated_labels_have_edges(self):
        # each shape-bearing map must produce a non-empty derived target
        spec = tiny_spec(size=64)
        for i in range(3):
            sample = D.make_sample(spec, "train", i)
            target = edges.derive_edge_targets(sample.labels, 4)
            assert target.g.sum() > 0

    def test_load_split_roundtrip(self, tmp_path):
        spec = tiny_spec()
        D.generate(spec, tmp_path)
        samples = D.load_split(tmp_path, "val")
        assert len(samples) == 2
        fresh = D.make_sample(spec, "val", 0)
        assert np.array_equal(samples[0].labels, fresh.labels)
        # images survive the 8-bit file format within quantization error
        assert np.max(np.abs(samples[0].image - fresh.image)) <= 0.5 / 255 + 1e-12

    def test_load_split_missing_manifest(self, tmp_path):
        with pytest.raises(MissingInputError):
            D.load_split(tmp_path, "train")

    def test_load_split_bad_name(self, tmp_path):
        with pytest.raises(ParameterError):
            D.load_split(tmp_path, "dev")


class TestAugment:
    def sample(self, size=48):
        return D.make_sample(tiny_spec(size=size), "train", 1)

    def test_hflip_is_involution(self):
        s = self.sample()
        back = D.hflip(D.hflip(s))
        assert np.array_equal(back.labels, s.labels)
        assert np.array_equal(back.image, s.image)

    def test_rescale_identity(self):
        s = self.sample()
        out = D.rescale(s, 1.0)
        assert np.array_equal(out.labels, s.labels)
        assert np.array_equal(out.image, s.image)

    def test_rescale_halves_shape(self):
        out = D.rescale(self.sample(), 0.5)
        assert out.labels.shape == (24, 24)
        assert out.image.shape == (3, 24, 24)

    def test_labels_never_interpolated(self):
        s = self.sample()
        original = set(np.unique(s.labels))
        for factor in (0.5, 0.77, 1.3, 2.0):
            out = D.rescale(s, factor)
            assert set(np.unique(out.labels)) <= original | {D.IGNORE_VALUE}

    def test_pad_fills_ignore_and_black(self):
        s = D.rescale(self.sample(), 0.5)
        rng = np.random.default_rng(0)
        out = D.crop_or_pad(s, rng, 48, 48)
        assert out.labels.shape == (48, 48)
        assert (out.labels == D.IGNORE_VALUE).sum() >= 48 * 48 - 24 * 24
        assert np.all(out.image[:, out.labels == D.IGNORE_VALUE] == 0.0)

    def test_crop_keeps_window(self):
        s = self.sample()
        out = D.crop_or_pad(s, np.random.default_rng(1), 32, 32)
        assert out.labels.shape == (32, 32)
        assert set(np.unique(out.labels)) <= set(np.unique(s.labels))

    def test_photometric_jitter_stays_in_unit_range(self):
        s = self.sample()
        for seed in range(5):
            out = D.photometric_jitter(s.image, np.random.default_rng(seed))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == s.image.shape

    def test_normalize_image_centers(self):
        image = np.full((3, 2, 2), 0.5)
        assert np.array_equal(D.normalize_image(image), np.zeros((3, 2, 2)))
        assert np.array_equal(D.normalize_image(np.ones((3, 1, 1))), np.ones((3, 1, 1)))

    def test_augment_output_contract(self):
        s = self.sample()
        for seed in range(6):
            out = D.augment(s, np.random.default_rng(seed), 48, 48)
            assert out.image.shape == (3, 48, 48)
            assert out.labels.shape == (48, 48)
            assert set(np.unique(out.labels)) <= {0, 1, 2, 3, D.IGNORE_VALUE}
            # image was normalized to mean 0.5 / std 0.5
            assert out.image.min() >= -1.0 - 1e-12 and out.image.max() <= 1.0 + 1e-12

    def test_augment_deterministic_per_rng_state(self):
        s = self.sample()
        a = D.augment(s, np.random.default_rng(7), 48, 48)
        b = D.augment(s, np.random.default_rng(7), 48, 48)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.labels, b.labels)
