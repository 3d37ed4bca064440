import numpy as np
import pytest
import torch

from dzsr.adastn import (AdaSTN, AdaSTNConfig, AlignmentStack, affine_offsets,
                         deformable_sample, regular_grid)
from dzsr.errors import ConfigError, DimensionError, NumericError

EXPECTED_GRID = [[-1, -1, -1, 0, 0, 0, 1, 1, 1],
                 [-1, 0, 1, -1, 0, 1, -1, 0, 1]]


def brute_force_conv3x3(x, weight, bias):
    """Direct-summation 3x3 convolution (zero padding), loops only."""
    B, C, H, W = x.shape
    O = weight.shape[0]
    out = np.zeros((B, O, H, W))
    xn = x.numpy()
    wn = weight.numpy().reshape(O, C, 3, 3)
    for b in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for c in range(C):
                        for di in (-1, 0, 1):
                            for dj in (-1, 0, 1):
                                ii, jj = i + di, j + dj
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += wn[o, c, di + 1, dj + 1] * xn[b, c, ii, jj]
                    out[b, o, i, j] = acc + (bias.numpy()[o] if bias is not None else 0.0)
    return torch.from_numpy(out).to(x.dtype)


class TestRegularGrid:
    def test_matches_expected_matrix(self):
        assert regular_grid().tolist() == EXPECTED_GRID

    def test_center_tap(self):
        assert regular_grid()[:, 4].tolist() == [0, 0]

    def test_row_sums_zero(self):
        assert regular_grid().sum(dim=1).tolist() == [0, 0]


class TestAffineOffsets:
    def test_zero_case(self):
        A = torch.zeros(4, 4, 2, 2)
        b = torch.zeros(4, 4, 2)
        assert not affine_offsets(A, b).any()

    def test_identity_gives_grid(self):
        A = torch.eye(2).expand(4, 4, 2, 2).contiguous()
        b = torch.zeros(4, 4, 2)
        P = affine_offsets(A, b)
        grid = regular_grid().float()
        assert torch.equal(P[2, 3], grid)

    def test_pure_translation(self):
        A = torch.zeros(2, 2, 2, 2)
        b = torch.zeros(2, 2, 2)
        b[..., 0] = 1.0
        P = affine_offsets(A, b)
        assert torch.equal(P[0, 0, 0], torch.ones(9))
        assert torch.equal(P[0, 0, 1], torch.zeros(9))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            affine_offsets(torch.zeros(4, 4, 2, 2), torch.zeros(3, 4, 2))


class TestDeformableSample:
    def setup_method(self):
        torch.manual_seed(0)
        self.x = torch.randn(2, 3, 8, 8)
        self.w = torch.randn(4, 3, 9)
        self.bias = torch.randn(4)

    def test_zero_offsets_collapse_to_1x1(self):
        P = torch.zeros(2, 8, 8, 2, 9)
        y = deformable_sample(self.x, self.w, self.bias, P)
        collapsed = torch.nn.functional.conv2d(
            self.x, self.w.sum(-1)[:, :, None, None], self.bias)
        assert (y - collapsed).abs().max() <= 1e-5

    def test_grid_offsets_equal_3x3_conv(self):
        A = torch.eye(2).expand(2, 8, 8, 2, 2).contiguous()
        P = affine_offsets(A, torch.zeros(2, 8, 8, 2))
        y = deformable_sample(self.x, self.w, self.bias, P)
        oracle = brute_force_conv3x3(self.x, self.w, self.bias)
        assert (y - oracle).abs().max() <= 1e-5

    def test_integer_translation_exact_gather(self):
        # unit center tap on one channel: output is a pure gather, bit-exact
        x = self.x[:, :1]
        w = torch.zeros(1, 1, 9)
        w[0, 0, 4] = 1.0
        b = torch.zeros(2, 8, 8, 2)
        b[..., 0] = 2.0
        P = affine_offsets(torch.zeros(2, 8, 8, 2, 2), b)
        y = deformable_sample(x, w, None, P)
        expected = torch.zeros(2, 1, 8, 8)
        expected[:, :, :6, :] = x[:, :, 2:, :]
        assert torch.equal(y, expected)

    def test_integer_translation_multichannel(self):
        w = torch.zeros(1, 3, 9)
        w[0, :, 4] = torch.randn(3)
        b = torch.zeros(2, 8, 8, 2)
        b[..., 0] = 2.0
        P = affine_offsets(torch.zeros(2, 8, 8, 2, 2), b)
        y = deformable_sample(self.x, w, None, P)
        expected = torch.zeros(2, 1, 8, 8)
        expected[:, 0, :6, :] = (self.x[:, :, 2:, :] * w[0, :, 4][None, :, None, None]).sum(1)
        assert (y - expected).abs().max() <= 1e-6

    def test_out_of_bounds_reads_zero(self):
        P = torch.full((2, 8, 8, 2, 9), 100.0)
        y = deformable_sample(self.x, self.w, None, P)
        assert not y.any()

    def test_nan_offsets_rejected(self):
        P = torch.zeros(2, 8, 8, 2, 9)
        P[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericError):
            deformable_sample(self.x, self.w, self.bias, P)

    def test_offset_shape_mismatch(self):
        with pytest.raises(DimensionError):
            deformable_sample(self.x, self.w, self.bias, torch.zeros(2, 4, 8, 2, 9))


class TestGradients:
    def test_match_finite_differences(self):
        torch.manual_seed(3)
        x = torch.randn(1, 1, 6, 6, dtype=torch.float64, requires_grad=True)
        w = torch.randn(2, 1, 9, dtype=torch.float64, requires_grad=True)
        bias = torch.randn(2, dtype=torch.float64, requires_grad=True)
        A = (torch.randn(1, 6, 6, 2, 2, dtype=torch.float64) * 0.3).requires_grad_(True)
        b = (torch.randn(1, 6, 6, 2, dtype=torch.float64) * 0.7).requires_grad_(True)
        cvec = torch.randn(1, 2, 6, 6, dtype=torch.float64)

        def scalar():
            return (deformable_sample(x, w, bias, affine_offsets(A, b)) * cvec).sum()

        scalar().backward()
        eps = 1e-6
        rng = np.random.default_rng(0)
        for t in (x, w, bias, A, b):
            flat = t.detach().reshape(-1)
            grad = t.grad.reshape(-1)
            for i in rng.choice(flat.numel(), size=min(10, flat.numel()), replace=False):
                orig = flat[i].item()
                flat[i] = orig + eps
                lp = scalar().item()
                flat[i] = orig - eps
                lm = scalar().item()
                flat[i] = orig
                fd = (lp - lm) / (2 * eps)
                an = grad[i].item()
                assert abs(an - fd) / max(abs(an), abs(fd), 1e-6) < 1e-4


class TestAdaSTNUnit:
    def _unit(self, mode="adastn"):
        torch.manual_seed(1)
        return AdaSTN(4, 4, 4, estimator_channels=8, mode=mode)

    def test_force_zero_matches_zero_offset_path(self):
        unit = self._unit()
        x = torch.randn(2, 4, 8, 8)
        g = torch.randn(2, 4, 8, 8)
        out_forced = unit(x, g, force_zero=True)
        P0 = torch.zeros(2, 8, 8, 2, 9)
        direct = deformable_sample(x, unit.weight, unit.bias, P0)
        assert torch.equal(out_forced, direct)

    def test_deterministic(self):
        unit = self._unit()
        x = torch.randn(2, 4, 8, 8)
        g = torch.randn(2, 4, 8, 8)
        assert torch.equal(unit(x, g), unit(x, g))

    @pytest.mark.parametrize("mode", ["adastn", "stn_global", "deform_direct"])
    def test_output_shape_all_modes(self, mode):
        unit = self._unit(mode)
        x = torch.randn(2, 4, 10, 12)
        g = torch.randn(2, 4, 10, 12)
        assert unit(x, g).shape == (2, 4, 10, 12)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            AdaSTN(4, 4, 4, mode="bogus")

    def test_zero_mask_matches_forced(self):
        unit = self._unit()
        x = torch.randn(2, 4, 8, 8)
        g = torch.randn(2, 4, 8, 8)
        masked = unit(x, g, zero_mask=torch.tensor([True, False]))
        forced = unit(x, g, force_zero=True)
        assert torch.equal(masked[0], forced[0])
        assert not torch.equal(masked[1], forced[1])

    def test_stn_global_single_offset_everywhere(self):
        unit = self._unit("stn_global")
        x = torch.randn(1, 4, 8, 8)
        g = torch.randn(1, 4, 8, 8)
        P = unit.predict_offsets(x, g)
        assert torch.equal(P[0, 0, 0], P[0, 5, 7])


class TestAlignmentStack:
    def _stack(self, zero_prob=0.3, mode="adastn"):
        torch.manual_seed(2)
        return AlignmentStack(4, AdaSTNConfig(3, zero_prob, 8), mode)

    def test_inference_equals_three_forced_zero_units(self):
        stack = self._stack()
        x = torch.randn(2, 4, 8, 8)
        out = stack(x, None, training=False)
        manual = x
        for unit in stack.units:
            manual = unit(manual, force_zero=True)
        assert torch.equal(out, manual)

    def test_inference_runs_no_estimator(self):
        stack = self._stack()
        x = torch.randn(2, 4, 8, 8)
        stack(x, None, training=False)
        assert all(u.estimator_calls == 0 for u in stack.units)

    def test_zero_prob_one_matches_inference(self):
        stack = self._stack(zero_prob=1.0)
        x = torch.randn(2, 4, 8, 8)
        g = torch.randn(2, 4, 8, 8)
        trained = stack(x, g, training=True, seed=0)
        inference = stack(x, None, training=False)
        assert torch.equal(trained, inference)

    def test_all_zero_frequency_near_p_cubed(self):
        stack = self._stack(zero_prob=0.3)
        x = torch.randn(1000, 4, 2, 2) * 0.0
        g = torch.zeros_like(x)
        stack(x, g, training=True, seed=123)
        masks = torch.stack(stack.last_zero_masks)  # [3, 1000]
        all_three = masks.all(dim=0).float().mean().item()
        assert abs(all_three - 0.027) <= 0.015

    def test_dims_mismatch_rejected(self):
        stack = self._stack()
        with pytest.raises(DimensionError):
            stack(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 6, 6), training=True)
