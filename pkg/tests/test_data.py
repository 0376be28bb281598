import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binsr.data import (
    MetricsReport, PSNR_CAP, bicubic_resize, cubic, load_dataset, load_image, make_pairs,
    psnr_y, resize_matrix, rgb_to_y, sample_and_augment, save_image, ssim_y,
)


class TestBicubic:
    @pytest.mark.parametrize("phase", np.linspace(0, 1, 11))
    def test_partition_of_unity(self, phase):
        taps = phase + np.arange(-2, 3)
        assert abs(cubic(taps).sum() - 1) < 1e-6

    @settings(max_examples=30)
    @given(st.integers(1, 40), st.sampled_from([0.25, 0.5, 2, 4]))
    def test_rows_normalized(self, n, f):
        n_out = int(round(n * f))
        if n_out >= 1 and np.isclose(n_out, n * f):
            assert np.allclose(resize_matrix(n, n_out).sum(axis=1), 1, atol=1e-12)

    @pytest.mark.parametrize("factor", [2, 4, 0.5, 0.25])
    def test_constant(self, factor):
        img = np.full((16, 12, 3), 0.37, np.float32)
        assert np.allclose(bicubic_resize(img, factor), 0.37, atol=1e-6)

    def test_shapes(self, rng):
        img = rng.random((6, 10, 3)).astype(np.float32)
        assert bicubic_resize(img, 2).shape == (12, 20, 3)
        assert bicubic_resize(img, 4).shape == (24, 40, 3)
        assert bicubic_resize(rng.random((1, 3, 8, 4)), 0.5).shape == (1, 3, 4, 2)

    def test_ramp_roundtrip(self):
        y, x = np.mgrid[0:32, 0:32]
        ramp = (0.2 + 0.01 * x + 0.005 * y)[..., None].repeat(3, -1)
        back = bicubic_resize(bicubic_resize(ramp, 2), 0.5)
        assert np.max(np.abs(back - ramp)) < 1e-2

    def test_clipped(self, rng):
        img = (rng.random((8, 8, 3)) > 0.5).astype(np.float32)
        up = bicubic_resize(img, 4)
        assert up.min() >= 0 and up.max() <= 1

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            bicubic_resize(np.zeros((0, 4, 3)), 2)
        with pytest.raises(ValueError):
            bicubic_resize(np.zeros((5, 4, 3)), 0.5)


class TestAugment:
    def test_deterministic(self, rng):
        img = rng.random((40, 40, 3)).astype(np.float32)
        a = sample_and_augment(img, 16, 2, np.random.default_rng(3))
        b = sample_and_augment(img, 16, 2, np.random.default_rng(3))
        assert np.array_equal(a.lr, b.lr) and np.array_equal(a.hr, b.hr)

    @pytest.mark.parametrize("scale", [2, 4])
    def test_shapes_and_range(self, rng, scale):
        img = rng.random((40, 36, 3)).astype(np.float32)
        for _ in range(20):
            p = sample_and_augment(img, 16, scale, rng)
            assert p.lr.shape == (1, 3, 16 // scale, 16 // scale)
            assert p.hr.shape == (1, 3, 16, 16)
            assert 0 <= p.hr.min() and p.hr.max() <= 1

    def test_rot180_twice(self, rng):
        crop = rng.random((8, 8, 3))
        assert np.array_equal(np.rot90(np.rot90(crop, 2), 2), crop)

    def test_lr_from_clean_crop(self, rng):
        img = rng.random((16, 16, 3)).astype(np.float32)
        noisy = sample_and_augment(img, 16, 2, np.random.default_rng(5), noise_sigma=0.01)
        clean = sample_and_augment(img, 16, 2, np.random.default_rng(5), noise_sigma=0.0)
        assert np.array_equal(noisy.lr, clean.lr)
        assert not np.array_equal(noisy.hr, clean.hr)
        assert np.array_equal(bicubic_resize(clean.hr, 0.5), clean.lr)

    def test_patch_too_large(self, rng):
        with pytest.raises(ValueError):
            sample_and_augment(np.zeros((8, 8, 3)), 16, 2, rng)


class TestPsnr:
    def test_identical(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr_y(a, a) == PSNR_CAP

    def test_uniform_difference(self):
        a = np.full((8, 8, 3), 0.5)
        assert psnr_y(a, a + 0.1) == pytest.approx(20.0)

    def test_symmetric(self, rng):
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert psnr_y(a, b) == psnr_y(b, a)

    def test_luma_only(self):
        a = np.zeros((4, 4, 3))
        b = a.copy()
        b[..., 0], b[..., 1] = 0.587, -0.299  # zero luma change
        assert psnr_y(a, b) == PSNR_CAP

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr_y(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim_y(a, a) == pytest.approx(1.0)

    def test_inversion(self, rng):
        a = (rng.random((32, 32, 3)) > 0.5).astype(np.float64)
        assert ssim_y(a, 1 - a) < 0.1

    def test_bounds(self, rng):
        for _ in range(100):
            a, b = rng.random((12, 14, 3)), rng.random((12, 14, 3))
            assert -1 <= ssim_y(a, b) <= 1

    def test_matches_reference(self, rng):
        metrics = pytest.importorskip("skimage.metrics")
        a = rng.random((40, 30, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = metrics.structural_similarity(rgb_to_y(a), rgb_to_y(b), data_range=1.0,
                                            gaussian_weights=True, sigma=1.5,
                                            use_sample_covariance=False)
        assert ssim_y(a, b) == pytest.approx(ref, abs=1e-6)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim_y(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))


class TestReportAndIO:
    def test_means(self):
        r = MetricsReport()
        r.add("a", 30.0, 0.9, 28.0, 0.8)
        r.add("b", 32.0, 0.7, 29.0, 0.6)
        assert r.means() == pytest.approx((31.0, 0.8, 28.5, 0.7))
        lines = r.to_csv().splitlines()
        assert len(lines) == 4 and lines[-1].startswith("MEAN")

    def test_png_roundtrip(self, tmp_path, rng):
        img = np.rint(rng.random((5, 6, 3)) * 255) / 255
        (tmp_path / "hr").mkdir()
        save_image(img, tmp_path / "hr" / "x.png")
        assert np.allclose(load_image(tmp_path / "hr" / "x.png"), img, atol=1e-6)
        names = [n for n, _ in load_dataset(str(tmp_path))]
        assert names == ["x.png"]

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path / "nope"))

    def test_make_pairs_crops(self, rng):
        (lr, hr), = make_pairs([rng.random((9, 11, 3)).astype(np.float32)], 2)
        assert hr.shape == (1, 3, 8, 10) and lr.shape == (1, 3, 4, 5)
