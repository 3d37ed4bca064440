"""Per-pixel affine alignment operators.

Each alignment unit predicts, for every pixel, an affine matrix A (2x2) and
translation b (2,) that place the nine taps of a deformable 3x3 kernel:

    P = A @ G + b

where G is the fixed regular grid enumerating {-1, 0, 1}^2.  The unit then
computes y(q) = sum_k w_k * x(q + p_k) with bilinear sampling and zero
padding outside the feature map.  With P = 0 every tap lands on q and the
unit degenerates into a 1x1 convolution with the collapsed kernel sum_k w_k,
which is how it runs at test time (no estimator evaluation at all).

Two ablation variants share the machinery: a global single-(A, b) predictor
(pooled estimator features) and a direct per-pixel offset predictor that
emits all 18 numbers of P.
"""

from __future__ import annotations

import dataclasses
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, NumericError

MODES = ("adastn", "stn_global", "deform_direct")


def regular_grid() -> torch.Tensor:
    """The fixed 2x9 tap grid; columns enumerate {-1,0,1}^2 row-major."""
    return torch.tensor([[-1, -1, -1, 0, 0, 0, 1, 1, 1],
                         [-1, 0, 1, -1, 0, 1, -1, 0, 1]], dtype=torch.int64)


def affine_offsets(A: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """P = A @ G + b, per pixel.

    A: [..., 2, 2] (dimensionless), b: [..., 2] (pixels).
    Returns P: [..., 2, 9] in pixels.
    """
    if A.shape[-2:] != (2, 2):
        raise DimensionError(f"A must end in (2, 2), got {tuple(A.shape)}")
    if b.shape[-1] != 2 or b.shape[:-1] != A.shape[:-2]:
        raise DimensionError(
            f"b shape {tuple(b.shape)} does not match A shape {tuple(A.shape)}")
    grid = regular_grid().to(dtype=A.dtype, device=A.device)
    return A @ grid + b.unsqueeze(-1)


def deformable_sample(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None,
                      offsets: torch.Tensor) -> torch.Tensor:
    """Deformable 9-tap convolution with absolute tap positions.

    x: [B, C_in, H, W]; weight: [C_out, C_in, 9]; bias: [C_out] or None;
    offsets: [B, H, W, 2, 9] giving (dy, dx) per tap in pixels.  Sampling is
    bilinear; reads outside the map contribute zero.  Differentiable in x,
    weight, bias and offsets.
    """
    if x.dim() != 4:
        raise DimensionError(f"x must be [B, C, H, W], got {tuple(x.shape)}")
    B, C, H, W = x.shape
    if offsets.shape != (B, H, W, 2, 9):
        raise DimensionError(
            f"offsets must be {(B, H, W, 2, 9)}, got {tuple(offsets.shape)}")
    if weight.dim() != 3 or weight.shape[1] != C or weight.shape[2] != 9:
        raise DimensionError(f"weight must be [C_out, {C}, 9], got {tuple(weight.shape)}")
    if not torch.isfinite(offsets).all():
        raise NumericError("offsets contain non-finite values")

    dtype, device = x.dtype, x.device
    yy = torch.arange(H, dtype=dtype, device=device).view(1, H, 1, 1)
    xx = torch.arange(W, dtype=dtype, device=device).view(1, 1, W, 1)
    py = yy + offsets[:, :, :, 0, :]            # [B, H, W, 9]
    px = xx + offsets[:, :, :, 1, :]

    y0 = torch.floor(py)
    x0 = torch.floor(px)
    fy = py - y0
    fx = px - x0

    flat = x.reshape(B, C, H * W)
    taps = x.new_zeros(B, C, H * W * 9)
    for cy, cx, wgt in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x0 + 1, (1 - fy) * fx),
        (y0 + 1, x0, fy * (1 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        inside = (cy >= 0) & (cy < H) & (cx >= 0) & (cx < W)
        iy = cy.clamp(0, H - 1).long()
        ix = cx.clamp(0, W - 1).long()
        idx = (iy * W + ix).reshape(B, 1, H * W * 9).expand(B, C, -1)
        vals = flat.gather(2, idx)
        taps = taps + vals * (wgt * inside.to(dtype)).reshape(B, 1, H * W * 9)

    taps = taps.reshape(B, C, H * W, 9)
    out = torch.einsum("ock,bcpk->bop", weight, taps).reshape(B, -1, H, W)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


@dataclasses.dataclass
class AdaSTNConfig:
    num_stages: int = 3
    zero_prob: float = 0.3
    estimator_channels: int = 32

    def __post_init__(self):
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ConfigError(f"zero_prob must lie in [0, 1], got {self.zero_prob}")
        if self.num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {self.num_stages}")


def _kernel_params(out_channels: int, in_channels: int):
    weight = nn.Parameter(torch.empty(out_channels, in_channels, 9))
    nn.init.kaiming_uniform_(weight, a=math.sqrt(5))
    bound = 1.0 / math.sqrt(in_channels * 9)
    bias = nn.Parameter(torch.empty(out_channels).uniform_(-bound, bound))
    return weight, bias


class AdaSTN(nn.Module):
    """One alignment unit: offset estimator + deformable 9-tap kernel.

    The estimator reads concat(src, guide) and emits per-pixel (A, b)
    ("adastn"), one global (A, b) ("stn_global"), or the raw tap offsets
    ("deform_direct").  The A head starts at zero so training begins near
    the P = 0 operating point.  `estimator_calls` counts estimator
    evaluations; the test-time path must leave it untouched.
    """

    def __init__(self, in_channels: int, guide_channels: int, out_channels: int,
                 estimator_channels: int = 32, mode: str = "adastn"):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"unknown alignment mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight, self.bias = _kernel_params(out_channels, in_channels)
        self.body = nn.Sequential(
            nn.Conv2d(in_channels + guide_channels, estimator_channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(estimator_channels, estimator_channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        head_out = 18 if mode == "deform_direct" else 6
        self.head = nn.Conv2d(estimator_channels, head_out, 1)
        if mode != "deform_direct":
            with torch.no_grad():
                self.head.weight[:4].zero_()
                self.head.bias[:4].zero_()
        self.estimator_calls = 0

    def predict_offsets(self, src: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
        self.estimator_calls += 1
        feat = self.body(torch.cat([src, guide], dim=1))
        B, _, H, W = src.shape
        if self.mode == "stn_global":
            vec = self.head(F.adaptive_avg_pool2d(feat, 1))
            A = vec[:, :4].reshape(B, 1, 1, 2, 2)
            b = vec[:, 4:6].reshape(B, 1, 1, 2)
            return affine_offsets(A, b).expand(B, H, W, 2, 9)
        out = self.head(feat)
        if self.mode == "deform_direct":
            return out.reshape(B, 2, 9, H, W).permute(0, 3, 4, 1, 2)
        A = out[:, :4].permute(0, 2, 3, 1).reshape(B, H, W, 2, 2)
        b = out[:, 4:6].permute(0, 2, 3, 1)
        return affine_offsets(A, b)

    def forward(self, src: torch.Tensor, guide: torch.Tensor | None = None,
                force_zero: bool = False,
                zero_mask: torch.Tensor | None = None) -> torch.Tensor:
        B, _, H, W = src.shape
        if force_zero or guide is None:
            offsets = src.new_zeros(B, H, W, 2, 9)
        else:
            if guide.shape[-2:] != src.shape[-2:]:
                raise DimensionError(
                    f"guide spatial dims {tuple(guide.shape[-2:])} != src {tuple(src.shape[-2:])}")
            offsets = self.predict_offsets(src, guide)
            if zero_mask is not None:
                keep = (~zero_mask).to(offsets.dtype).view(B, 1, 1, 1, 1)
                offsets = offsets * keep
        return deformable_sample(src, self.weight, self.bias, offsets)


class AlignmentStack(nn.Module):
    """Sequence of alignment units applied to the LR features.

    Every unit deforms the running features toward the guide.  In training
    mode each unit independently zeroes its offsets per sample with
    probability `zero_prob` (recorded in `last_zero_masks`); in inference
    mode all offsets are zero and no estimator runs, so the stack reduces
    to a chain of 1x1 convolutions.
    """

    def __init__(self, channels: int, cfg: AdaSTNConfig, mode: str = "adastn"):
        super().__init__()
        self.cfg = cfg
        self.units = nn.ModuleList(
            AdaSTN(channels, channels, channels, cfg.estimator_channels, mode)
            for _ in range(cfg.num_stages)
        )
        self.last_zero_masks: list[torch.Tensor] = []

    def forward(self, lr_feat: torch.Tensor, guide_feat: torch.Tensor | None,
                training: bool, seed: int = 0, force_zero_all: bool = False) -> torch.Tensor:
        if guide_feat is not None and guide_feat.shape != lr_feat.shape:
            raise DimensionError(
                f"guide shape {tuple(guide_feat.shape)} != lr shape {tuple(lr_feat.shape)}")
        feat = lr_feat
        self.last_zero_masks = []
        if not training:
            for unit in self.units:
                feat = unit(feat, force_zero=True)
            return feat
        gen = torch.Generator().manual_seed(int(seed))
        B = lr_feat.shape[0]
        for unit in self.units:
            if force_zero_all:
                mask = torch.ones(B, dtype=torch.bool)
            else:
                mask = torch.rand(B, generator=gen) < self.cfg.zero_prob
            feat = unit(feat, guide_feat, zero_mask=mask)
            self.last_zero_masks.append(mask)
        return feat
