"""Affine transforms, sampled parameter ranges, and dataset generation."""

import numpy as np
import pytest

from segens.augment import (AugmentConfig, augment_dataset, mirror, rotate,
                            sample_transform, zoom)
from segens.errors import ShapeMismatchError
from segens.imageio import (ManifestRecord, load_gray, load_mask, store_gray,
                            store_mask, write_manifest)


@pytest.fixture
def pair():
    rng = np.random.default_rng(60)
    img = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    return img, mask


class TestMirror:
    def test_involution(self, pair):
        img, mask = pair
        i2, m2 = mirror(*mirror(img, mask))
        assert np.array_equal(i2, img) and np.array_equal(m2, mask)

    def test_symmetric_image_unchanged(self):
        img = np.array([[1, 2, 1], [3, 4, 3]], np.uint8)
        mask = np.array([[0, 1, 0], [1, 0, 1]], np.uint8)
        i2, m2 = mirror(img, mask)
        assert np.array_equal(i2, img) and np.array_equal(m2, mask)

    def test_row_reverses(self):
        img = np.array([[10, 20, 30]], np.uint8)
        mask = np.array([[1, 0, 0]], np.uint8)
        i2, m2 = mirror(img, mask)
        assert i2.tolist() == [[30, 20, 10]]
        assert m2.tolist() == [[0, 0, 1]]

    def test_dim_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mirror(np.zeros((2, 2), np.uint8), np.zeros((3, 3), np.uint8))


class TestRotate:
    def test_zero_angle_identity(self, pair):
        img, mask = pair
        i2, m2 = rotate(img, mask, 0.0)
        assert np.array_equal(i2, img) and np.array_equal(m2, mask)

    def test_full_turn_mask_identity(self, pair):
        img, mask = pair
        _, m2 = rotate(img, mask, 360.0)
        assert np.array_equal(m2, mask)

    def test_center_pixel_is_fixed_point(self):
        img = np.zeros((9, 9), np.uint8)
        mask = np.zeros((9, 9), np.uint8)
        mask[4, 4] = 1
        img[4, 4] = 200
        for angle in (7.3, -9.9, 45.0, 180.0):
            _, m2 = rotate(img, mask, angle)
            assert m2[4, 4] == 1
            assert m2.sum() == 1

    def test_quarter_turn_moves_mass(self):
        mask = np.zeros((8, 8), np.uint8)
        mask[1, 4] = 1
        img = mask * 255
        _, m2 = rotate(img, mask, 90.0)
        assert m2.sum() == 1
        assert m2[1, 4] == 0  # moved off its original spot

    def test_mask_stays_binary(self, pair):
        img, mask = pair
        for angle in (-10, 5.5, 33.3):
            _, m2 = rotate(img, mask, angle)
            assert set(np.unique(m2)) <= {0, 1}

    def test_non_finite_angle_rejected(self, pair):
        with pytest.raises(ValueError):
            rotate(*pair, float("nan"))


class TestZoom:
    def test_unit_factor_identity(self, pair):
        img, mask = pair
        i2, m2 = zoom(img, mask, 1.0)
        assert np.array_equal(i2, img) and np.array_equal(m2, mask)

    def test_zoom_in_fills_frame(self):
        # foreground occupying the central half fills the image at 2x
        mask = np.zeros((8, 8), np.uint8)
        mask[2:6, 2:6] = 1
        img = mask * 100
        _, m2 = zoom(img, mask, 2.0)
        assert m2.all()

    def test_zoom_out_shrinks_to_central_half(self):
        mask = np.ones((8, 8), np.uint8)
        img = np.full((8, 8), 80, np.uint8)
        i2, m2 = zoom(img, mask, 0.5)
        # coordinate map: output pixel centers (r+0.5) map to source
        # (r+0.5-4)/0.5+4, in bounds exactly for r in 2..5
        expected = np.zeros((8, 8), np.uint8)
        expected[2:6, 2:6] = 1
        assert np.array_equal(m2, expected)
        assert (i2[m2 == 0] == 0).all()

    def test_non_positive_factor_rejected(self, pair):
        with pytest.raises(ValueError):
            zoom(*pair, 0.0)

    def test_mask_stays_binary(self, pair):
        img, mask = pair
        for f in (0.8, 1.15, 1.4):
            _, m2 = zoom(img, mask, f)
            assert set(np.unique(m2)) <= {0, 1}


class TestSampling:
    def test_ranges_over_many_draws(self):
        config = AugmentConfig(seed=5)
        angles = []
        zooms = []
        mirrors = 0
        for k in range(10_000):
            _, mirrored, angle, factor = sample_transform(config, k, 7)
            angles.append(abs(angle))
            zooms.append(factor)
            mirrors += mirrored
        assert 5.0 <= min(angles) and max(angles) <= 10.0
        assert 0.8 <= min(zooms) and max(zooms) <= 1.4
        assert 0.45 < mirrors / 10_000 < 0.55

    def test_both_rotation_signs_appear(self):
        config = AugmentConfig(seed=6)
        signs = {np.sign(sample_transform(config, k, 3)[2]) for k in range(200)}
        assert signs == {-1.0, 1.0}

    def test_magnitude_only_mode(self):
        config = AugmentConfig(seed=7, rotate_both_directions=False)
        assert all(sample_transform(config, k, 3)[2] > 0 for k in range(100))

    def test_deterministic_per_index(self):
        config = AugmentConfig(seed=8)
        assert sample_transform(config, 42, 5) == sample_transform(config, 42, 5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(zoom_factors=(0.0, 1.0))
        with pytest.raises(ValueError):
            AugmentConfig(mirror_probability=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(rotation_degrees=(10.0, 5.0))


def _seed_dataset(tmp_path, n=3, size=12):
    rng = np.random.default_rng(61)
    records = []
    for i in range(n):
        img = rng.integers(0, 256, (size, size), dtype=np.uint8)
        mask = (rng.random((size, size)) > 0.5).astype(np.uint8)
        ipath = tmp_path / f"img{i}.pgm"
        mpath = tmp_path / f"mask{i}.pgm"
        store_gray(img, ipath)
        store_mask(mask, mpath)
        records.append(ManifestRecord("train", str(ipath), str(mpath)))
    return records


class TestAugmentDataset:
    def test_count_zero_changes_nothing(self, tmp_path):
        records = _seed_dataset(tmp_path)
        out = augment_dataset(records, AugmentConfig(count=0), tmp_path / "aug")
        assert out == records

    def test_train_split_grows_by_count(self, tmp_path):
        records = _seed_dataset(tmp_path)
        config = AugmentConfig(count=25, seed=3)
        out = augment_dataset(records, config, tmp_path / "aug")
        assert len(out) == len(records) + 25
        assert sum(r.split == "train" for r in out) == \
            sum(r.split == "train" for r in records) + 25

    def test_outputs_are_valid_binary_masks(self, tmp_path):
        records = _seed_dataset(tmp_path)
        out = augment_dataset(records, AugmentConfig(count=10, seed=4),
                              tmp_path / "aug")
        for rec in out[len(records):]:
            mask = load_mask(rec.gtmask)
            assert set(np.unique(mask)) <= {0, 1}
            assert load_gray(rec.image).shape == mask.shape

    def test_same_seed_reproduces_bytes(self, tmp_path):
        records = _seed_dataset(tmp_path)
        config = AugmentConfig(count=8, seed=9)
        out_a = augment_dataset(records, config, tmp_path / "a")
        out_b = augment_dataset(records, config, tmp_path / "b")
        for ra, rb in zip(out_a[len(records):], out_b[len(records):]):
            assert open(ra.image, "rb").read() == open(rb.image, "rb").read()
            assert open(ra.gtmask, "rb").read() == open(rb.gtmask, "rb").read()

    def test_no_train_records_rejected(self, tmp_path):
        records = [ManifestRecord("test", "a.pgm", "b.pgm")]
        with pytest.raises(ValueError, match="train"):
            augment_dataset(records, AugmentConfig(count=1), tmp_path / "aug")

    def test_two_thousand_extra_samples(self, tmp_path):
        # tiny 8x8 sources keep the full-size generation cheap
        rng = np.random.default_rng(62)
        records = []
        for i in range(2):
            img = rng.integers(0, 256, (8, 8), dtype=np.uint8)
            mask = (rng.random((8, 8)) > 0.5).astype(np.uint8)
            ipath = tmp_path / f"s{i}.pgm"
            mpath = tmp_path / f"sm{i}.pgm"
            store_gray(img, ipath)
            store_mask(mask, mpath)
            records.append(ManifestRecord("train", str(ipath), str(mpath)))
        out = augment_dataset(records, AugmentConfig(count=2000, seed=1),
                              tmp_path / "aug2k")
        train = [r for r in out if r.split == "train"]
        assert len(train) == 2 + 2000
