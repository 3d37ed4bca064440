import numpy as np
import pytest

from dzsr.errors import DimensionError
from dzsr.metrics import EvalReport, SampleScores, corner_mask, psnr, ssim


def ssim_loop_oracle(a, b, win, sigma=1.5, k1=0.01, k2=0.03):
    """Direct windowed SSIM with explicit loops over valid positions."""
    ax = np.arange(win) - (win - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    kern = np.outer(g, g)
    kern /= kern.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    h, w = a.shape[:2]
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c].astype(np.float64), b[..., c].astype(np.float64)
        ch_vals = []
        for i in range(h - win + 1):
            for j in range(w - win + 1):
                px = x[i:i + win, j:j + win]
                py = y[i:i + win, j:j + win]
                mx = (kern * px).sum()
                my = (kern * py).sum()
                vx = (kern * px * px).sum() - mx ** 2
                vy = (kern * py * py).sum() - my ** 2
                cov = (kern * px * py).sum() - mx * my
                ch_vals.append(((2 * mx * my + c1) * (2 * cov + c2)) /
                               ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
        vals.append(np.mean(ch_vals))
    return float(np.mean(vals))


def checkerboard(n=8):
    yy, xx = np.mgrid[0:n, 0:n]
    img = ((yy + xx) % 2).astype(np.float32)
    return np.stack([img] * 3, axis=2)


class TestPsnr:
    def test_identical_is_inf(self):
        a = np.random.default_rng(0).random((16, 16, 3))
        assert psnr(a, a.copy()) == float("inf")

    def test_closed_form_offset(self):
        a = np.random.default_rng(1).random((32, 32, 3)) * 0.5
        b = a + 10.0 / 255.0
        assert psnr(a, b) == pytest.approx(28.131, abs=1e-3)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))

    def test_masked(self):
        a = np.zeros((16, 16, 3))
        b = a.copy()
        b[4:12, 4:12] = 0.5  # corrupt only the centered window
        mask = corner_mask(16, 16, 2)
        assert np.isfinite(psnr(a, b))
        assert psnr(a, b, mask) == float("inf")


class TestSsim:
    def test_identical_is_one(self):
        a = np.random.default_rng(3).random((32, 32, 3))
        assert ssim(a, a.copy()) == 1.0

    def test_anticorrelated_negative(self):
        a = checkerboard(16)
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_loop_oracle_checkerboard(self):
        a = checkerboard(8)
        b = np.clip(a + 0.1, 0.0, 1.0).astype(np.float32)
        # 8x8 image: window shrinks to 7
        assert ssim(a, b) == pytest.approx(ssim_loop_oracle(a, b, win=7), abs=1e-6)

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(4)
        a = rng.random((14, 14, 3))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_loop_oracle(a, b, win=11), abs=1e-6)

    def test_value_range(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.random((16, 16, 3))
            b = rng.random((16, 16, 3))
            assert -1.0 <= ssim(a, b) <= 1.0


class TestCornerMask:
    @pytest.mark.parametrize("h,w,r", [(16, 16, 2), (64, 32, 4), (128, 128, 4)])
    def test_pixel_counts(self, h, w, r):
        mask = corner_mask(h, w, r)
        assert mask.shape == (h, w)
        assert int((~mask).sum()) == (h // r) * (w // r)
        assert int(mask.sum()) == h * w - (h // r) * (w // r)

    def test_window_centered(self):
        mask = corner_mask(16, 16, 2)
        assert not mask[4:12, 4:12].any()
        assert mask[0, 0] and mask[-1, -1]


class TestEvalReport:
    def _report(self):
        scores = [SampleScores("a", 30.0, 0.9, float("inf"), 1.0),
                  SampleScores("b", 32.0, 0.8, 31.0, 0.7)]
        return EvalReport(scores=scores, runtime_s=1.5, ratio=2)

    def test_csv_inf_formatting(self):
        csv = self._report().to_csv()
        assert "inf" in csv
        assert csv.splitlines()[0] == "sample_id,full_psnr,full_ssim,corner_psnr,corner_ssim"
        assert len(csv.splitlines()) == 3

    def test_summary_excludes_inf_with_note(self):
        rep = self._report()
        text = rep.summary()
        assert "(1 inf excluded)" in text
        assert rep.mean_full_psnr() == pytest.approx(31.0)
