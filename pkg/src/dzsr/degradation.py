"""Learned degradation: maps the ground-truth frame to a pseudo-LR image.

The network blurs-and-downsamples the GT conditioned on the real LR frame:
a small guidance encoder pools the LR into a vector that channel-modulates
every backbone feature layer (global scale/shift), letting the net adapt to
per-sample brightness and noise level without moving content.

Spatial fidelity is the whole point: downsampling is done by shift-free
area pooling and every backbone convolution is penalized by a centroid loss
that pins its kernel's mass center to the geometric center, so the
pseudo-LR stays aligned with the GT frame it was computed from.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError


class _Guidance(nn.Module):
    """LR frame -> global modulation vectors, one (scale, shift) pair per layer."""

    def __init__(self, widths: list[int], embed: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, embed, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(embed, embed, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.mix = nn.Sequential(nn.Linear(embed, embed), nn.LeakyReLU(0.1, inplace=True))
        self.heads = nn.ModuleList(nn.Linear(embed, 2 * w) for w in widths)
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, lr: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
        v = self.mix(self.stem(lr).flatten(1))
        out = []
        for head in self.heads:
            sv = head(v)
            w = sv.shape[1] // 2
            out.append((sv[:, :w], sv[:, w:]))
        return out


class DegradationNet(nn.Module):
    """GT frame + LR guidance -> clean pseudo-LR at 1/ratio scale.

    Five convolutions at width `channels`; the two pre-pool layers use 5x5
    kernels so the blur fits inside their receptive field, the rest 3x3.
    An area pool after the second conv performs the full ratio-fold
    downsampling; pooling is shift-free, and the centroid penalty keeps the
    convolutions shift-free, so the net cannot displace content.  Layers
    1-4 are modulated as h * (1 + scale) + shift (identity at init).
    """

    def __init__(self, ratio: int, channels: int = 32):
        super().__init__()
        if ratio < 2:
            raise ConfigError(f"ratio must be >= 2, got {ratio}")
        self.ratio = ratio
        self.channels = channels
        c = channels
        self.convs = nn.ModuleList([
            nn.Conv2d(3, c, 5, padding=2),
            nn.Conv2d(c, c, 5, padding=2),
            nn.Conv2d(c, c, 3, padding=1),
            nn.Conv2d(c, c, 3, padding=1),
            nn.Conv2d(c, 3, 3, padding=1),
        ])
        self.pool = nn.AvgPool2d(ratio)
        self.act = nn.LeakyReLU(0.1, inplace=False)
        self.guidance = _Guidance([c, c, c, c])
        self.forward_calls = 0

    def backbone_kernels(self) -> list[torch.Tensor]:
        return [conv.weight for conv in self.convs]

    def forward(self, gt: torch.Tensor, lr: torch.Tensor) -> torch.Tensor:
        if gt.shape[-2] != lr.shape[-2] * self.ratio or gt.shape[-1] != lr.shape[-1] * self.ratio:
            raise DimensionError(
                f"gt {tuple(gt.shape[-2:])} must be ratio {self.ratio} x lr {tuple(lr.shape[-2:])}")
        self.forward_calls += 1
        mods = self.guidance(lr)
        h = gt
        for i, conv in enumerate(self.convs[:4]):
            h = conv(h)
            scale, shift = mods[i]
            h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
            h = self.act(h)
            if i == 1:
                h = self.pool(h)
        return self.convs[4](h)


def degrade(gt_img: np.ndarray, lr_img: np.ndarray, net: DegradationNet) -> np.ndarray:
    """Image-space wrapper around DegradationNet (deterministic)."""
    gt = torch.from_numpy(np.ascontiguousarray(gt_img.transpose(2, 0, 1)))[None]
    lr = torch.from_numpy(np.ascontiguousarray(lr_img.transpose(2, 0, 1)))[None]
    with torch.no_grad():
        out = net(gt.float(), lr.float())
    return out[0].permute(1, 2, 0).numpy()


def centroid_loss(weight: torch.Tensor) -> torch.Tensor:
    """First-moment penalty of a [C_out, C_in, k, k] kernel.

    Per (out, in) pair: |sum_ij (i - k/2 + 0.5) w_ij| + |sum_ij (j - k/2 + 0.5) w_ij|,
    summed over all pairs.  Zero iff every kernel's mass centroid sits at
    the spatial center along both axes.

    The moments are evaluated on the antisymmetric part (w - flip(w)) / 2,
    which is algebraically identical (the coordinate weights are odd under
    the flip) but cancels term by term in floating point, so a
    centro-symmetric kernel scores exactly zero.
    """
    if weight.dim() != 4 or weight.shape[-1] != weight.shape[-2]:
        raise DimensionError(f"expected [C_out, C_in, k, k], got {tuple(weight.shape)}")
    k = weight.shape[-1]
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}")
    coords = torch.arange(k, dtype=weight.dtype, device=weight.device) - k / 2 + 0.5
    anti = weight - torch.flip(weight, (-2, -1))
    mi = 0.5 * (anti * coords.view(1, 1, k, 1)).sum(dim=(2, 3))
    mj = 0.5 * (anti * coords.view(1, 1, 1, k)).sum(dim=(2, 3))
    return mi.abs().sum() + mj.abs().sum()


def degradation_loss(pseudo_noisy: torch.Tensor, lr: torch.Tensor,
                     residual: torch.Tensor, kernels: list[torch.Tensor],
                     centroid_weight: float = 100.0) -> torch.Tensor:
    """Mean-L1 of (pseudo_noisy - residual) against the real LR, plus the
    weighted centroid penalty summed over the backbone kernels."""
    if pseudo_noisy.shape != lr.shape or residual.shape != lr.shape:
        raise DimensionError(
            f"shape mismatch: {tuple(pseudo_noisy.shape)} vs {tuple(lr.shape)} vs {tuple(residual.shape)}")
    data_term = (pseudo_noisy - residual - lr).abs().mean()
    cent = pseudo_noisy.new_zeros(())
    for w in kernels:
        cent = cent + centroid_loss(w)
    return data_term + centroid_weight * cent
