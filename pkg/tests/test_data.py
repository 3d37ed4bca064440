import numpy as np
import pytest

from dzsr.data import (NoiseSpec, apply_warp, area_downsample, augment_images,
                       augment_warp, bicubic_upsample, center_crop, color_match,
                       inject_noise, make_dualzoom_pair, quantize16, smooth_warp_field)
from dzsr.errors import ConfigError, DimensionError
from dzsr.metrics import psnr
from dzsr.scenes import synthesize_scene


def rand_image(seed, h=32, w=32):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, 3)).astype(np.float32)


class TestCenterCrop:
    def test_offset_formula_400_ratio4(self):
        img = np.zeros((400, 400, 3), dtype=np.float32)
        img[150, 150] = 1.0
        out = center_crop(img, 4)
        assert out.shape == (100, 100, 3)
        assert out[0, 0, 0] == 1.0

    def test_ratio_one_identity(self):
        img = rand_image(0)
        out = center_crop(img, 1)
        assert np.array_equal(out, img)
        assert out is not img

    def test_gradient_source_index(self):
        w = 400
        g = np.tile((np.arange(w, dtype=np.float32) / (w - 1))[None, :, None], (w, 1, 3))
        out = center_crop(g, 4)
        assert out[0, 0, 0] == pytest.approx(150 / 399, abs=1e-7)

    def test_non_divisible_names_axis(self):
        with pytest.raises(DimensionError, match="height 102"):
            center_crop(np.zeros((102, 100, 3), dtype=np.float32), 4)
        with pytest.raises(DimensionError, match="width 102"):
            center_crop(np.zeros((100, 102, 3), dtype=np.float32), 4)


class TestSynthesizeScene:
    def test_deterministic(self):
        a = synthesize_scene(7, (256, 256))
        b = synthesize_scene(7, (256, 256))
        assert np.array_equal(a, b)

    def test_seed_sensitivity(self):
        a = synthesize_scene(7, (256, 256))
        b = synthesize_scene(8, (256, 256))
        frac = (a != b).any(axis=2).mean()
        assert frac >= 0.01

    def test_range_and_std_floor_100_seeds(self):
        for seed in range(100):
            img = synthesize_scene(seed, (128, 128))
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert img.std() >= 0.05


class TestMakeDualzoomPair:
    def test_zero_warp_identity(self):
        hr = synthesize_scene(3, (64, 64))
        s = make_dualzoom_pair(hr, 2, 0.0, NoiseSpec.disabled(), 5,
                               blur_sigma_range=(0.0, 0.0))
        assert np.array_equal(s.telephoto, quantize16(hr))
        assert np.array_equal(s.true_warp, np.zeros_like(s.true_warp))

    def test_geometry_contract(self):
        hr = synthesize_scene(4, (256, 256))
        s = make_dualzoom_pair(hr, 4, 1.0, NoiseSpec(), 6)
        assert s.short_focus.shape == (64, 64, 3)
        assert s.telephoto.shape == (256, 256, 3)
        assert s.true_warp.shape == (256, 256, 2)
        assert np.abs(s.true_warp).max() <= 1.0 + 1e-6

    @pytest.mark.parametrize("ratio,size", [(2, (128, 128)), (4, (256, 256))])
    def test_same_content_floor(self, ratio, size):
        # noise-free, blur-free, warp-free: the two views must depict the
        # same content well above the 25 dB floor at both scale relations
        for i in range(20):
            hr = synthesize_scene(100 + i, size)
            s = make_dualzoom_pair(hr, ratio, 0.0, NoiseSpec.disabled(), 200 + i,
                                   blur_sigma_range=(0.0, 0.0))
            assert psnr(area_downsample(s.telephoto, ratio), s.short_focus) >= 25.0
            assert psnr(bicubic_upsample(s.short_focus, ratio), s.telephoto) >= 25.0

    def test_ref_window_consistency(self):
        # the center crop of the LR depicts the same region as the
        # downsampled center crop of the telephoto (the Ref window)
        hr = synthesize_scene(11, (128, 128))
        s = make_dualzoom_pair(hr, 2, 0.0, NoiseSpec.disabled(), 11,
                               blur_sigma_range=(0.0, 0.0))
        lr_center = center_crop(s.short_focus, 2)
        ref_down = area_downsample(center_crop(s.telephoto, 2), 2)
        assert psnr(ref_down, lr_center) >= 25.0

    def test_determinism(self):
        hr = synthesize_scene(5, (64, 64))
        a = make_dualzoom_pair(hr, 2, 2.0, NoiseSpec(), 9)
        b = make_dualzoom_pair(hr, 2, 2.0, NoiseSpec(), 9)
        assert np.array_equal(a.short_focus, b.short_focus)
        assert np.array_equal(a.telephoto, b.telephoto)
        assert np.array_equal(a.true_warp, b.true_warp)

    def test_negative_warp_bound_rejected(self):
        hr = synthesize_scene(5, (64, 64))
        with pytest.raises(ConfigError):
            make_dualzoom_pair(hr, 2, -1.0, NoiseSpec(), 9)

    def test_indivisible_dims_rejected(self):
        hr = synthesize_scene(5, (72, 72))  # 72 % 16 != 0
        with pytest.raises(DimensionError):
            make_dualzoom_pair(hr, 4, 0.0, NoiseSpec(), 9)

    def test_meta_records_draws(self):
        hr = synthesize_scene(5, (64, 64))
        s = make_dualzoom_pair(hr, 2, 1.0, NoiseSpec(), 9)
        for key in ("seed", "ratio", "blur_sigma", "sigma", "quality", "order"):
            assert key in s.degradation_meta


class TestInjectNoise:
    def test_degenerate_spec_is_identity(self):
        img = rand_image(1)
        noisy, resid = inject_noise(img, NoiseSpec.disabled(), 3)
        assert np.array_equal(noisy, img)
        assert not resid.any()

    def test_residual_exactness(self):
        img = quantize16(rand_image(2))
        noisy, resid = inject_noise(img, NoiseSpec(), 4)
        assert np.array_equal(img + resid, noisy)

    def test_gaussian_sigma_statistics(self):
        # constant mid-gray, fixed sigma 10/255: sample std within 5%
        img = np.full((256, 256, 3), 0.5, dtype=np.float32)
        spec = NoiseSpec(gaussian_sigma_range=(10 / 255, 10 / 255),
                         jpeg_quality_range=(100, 100),
                         sensor_a_range=(0.0, 0.0), sensor_b_range=(0.0, 0.0))
        _, resid = inject_noise(img, spec, 5)
        assert abs(resid.std() - 10 / 255) <= 0.05 * 10 / 255

    def test_stage_order_varies_with_seed(self):
        img = quantize16(rand_image(3))
        spec = NoiseSpec()
        orders = set()
        for seed in range(12):
            from dzsr.data import _noise_pipeline
            _, meta = _noise_pipeline(img, spec, seed)
            orders.add(meta["order"])
        assert len(orders) > 1

    def test_bad_ranges_rejected(self):
        with pytest.raises(ConfigError):
            NoiseSpec(gaussian_sigma_range=(0.2, 0.1))
        with pytest.raises(ConfigError):
            NoiseSpec(jpeg_quality_range=(0, 95))


class TestColorMatch:
    def test_fixed_point(self):
        src = rand_image(6)
        out = color_match(src, src.copy())
        assert np.abs(out - src).max() <= 1e-6

    def test_matches_target_stats(self):
        src = rand_image(7) * 0.5 + 0.2
        target = rand_image(8) * 0.6 + 0.3
        out = color_match(src, target)
        for c in range(3):
            assert out[..., c].mean() == pytest.approx(target[..., c].mean(), abs=1e-6)
            assert out[..., c].std() == pytest.approx(target[..., c].std(), abs=1e-6)

    def test_zero_variance_mean_shift(self):
        src = np.full((16, 16, 3), 0.2, dtype=np.float32)
        target = np.full((16, 16, 3), 0.6, dtype=np.float32)
        with pytest.warns(UserWarning):
            out = color_match(src, target)
        assert np.allclose(out, 0.6, atol=1e-6)


class TestWarp:
    def test_zero_field_identity(self):
        img = rand_image(9)
        field = np.zeros((32, 32, 2), dtype=np.float32)
        assert np.array_equal(apply_warp(img, field), img)

    def test_bound_respected(self):
        field = smooth_warp_field((64, 64), 3.0, 11)
        assert np.abs(field).max() <= 3.0 + 1e-5
        assert np.abs(field).max() >= 1.0  # rescaled to reach the bound

    def test_zero_bound_zero_field(self):
        field = smooth_warp_field((64, 64), 0.0, 11)
        assert not field.any()

    def test_integer_shift(self):
        img = rand_image(10)
        field = np.zeros((32, 32, 2), dtype=np.float32)
        field[..., 0] = 1.0  # read one row down
        out = apply_warp(img, field)
        assert np.array_equal(out[:-1], img[1:])


class TestAugmentation:
    @pytest.mark.parametrize("hf,vf,k", [(True, False, 0), (False, True, 0),
                                         (False, False, 1), (True, True, 2),
                                         (True, False, 3)])
    def test_warp_commutes_with_augmentation(self, hf, vf, k):
        hr = synthesize_scene(21, (64, 64))
        field = smooth_warp_field((64, 64), 2.5, 22)
        warped_then_aug = augment_images([apply_warp(hr, field)], hf, vf, k)[0]
        aug_hr = augment_images([hr], hf, vf, k)[0]
        aug_field = augment_warp(field, hf, vf, k)
        aug_then_warped = apply_warp(aug_hr, aug_field)
        assert np.abs(warped_then_aug - aug_then_warped).max() <= 1e-5

    @pytest.mark.parametrize("hf,vf,k", [(True, False, 0), (False, False, 1),
                                         (True, True, 3)])
    def test_pair_scene_relation_preserved(self, hf, vf, k):
        hr = synthesize_scene(23, (64, 64))
        s = make_dualzoom_pair(hr, 2, 0.0, NoiseSpec.disabled(), 24,
                               blur_sigma_range=(0.0, 0.0))
        short_a, tele_a = augment_images([s.short_focus, s.telephoto], hf, vf, k)
        assert psnr(area_downsample(tele_a, 2), short_a) >= 25.0
