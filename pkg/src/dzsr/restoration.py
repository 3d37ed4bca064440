"""Restoration body: fuse aligned LR and Ref features, upsample to SR.

The backbone is a chain of residual blocks whose branches are gated by
globally pooled modulation vectors, one (scale, shift) pair per block.  The
modulation encoder sees the fused features plus the raw reference image and
the central LR window; everything it does before global pooling is
pixelwise, so its output is exactly invariant to spatial permutations of
its inputs and weak residual misalignment cannot perturb it.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError


def center_crop_t(x: torch.Tensor, ratio: int) -> torch.Tensor:
    """Centered H/ratio x W/ratio window of a [..., H, W] tensor."""
    h, w = x.shape[-2], x.shape[-1]
    if h % ratio or w % ratio:
        raise DimensionError(f"dims {h}x{w} not divisible by ratio {ratio}")
    ch, cw = h // ratio, w // ratio
    top, left = (h - ch) // 2, (w - cw) // 2
    return x[..., top:top + ch, left:left + cw]


class ResidualBlock(nn.Module):
    """x + scale * f(x) + shift, f = conv-relu-conv with zero-init second conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
        if scale.shape[-1] != x.shape[1] or shift.shape[-1] != x.shape[1]:
            raise DimensionError(
                f"modulation length {scale.shape[-1]} != channel count {x.shape[1]}")
        branch = self.conv2(F.relu(self.conv1(x)))
        return x + scale[:, :, None, None] * branch + shift[:, :, None, None]


class _PixelwiseStem(nn.Module):
    """1x1 conv stack; spatially pixelwise, so pooling after it is exactly
    permutation invariant."""

    def __init__(self, in_channels: int, embed: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, embed, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(embed, embed, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).mean(dim=(2, 3))


class ModulationEncoder(nn.Module):
    """Pooled global context -> per-block (scale, shift) vectors.

    Initialized so every block starts at scale = 1, shift = 0.
    """

    def __init__(self, fused_channels: int, ref_channels: int, lr_channels: int,
                 block_channels: int, num_blocks: int, embed: int = 32):
        super().__init__()
        self.num_blocks = num_blocks
        self.block_channels = block_channels
        self.stems = nn.ModuleList([
            _PixelwiseStem(fused_channels, embed),
            _PixelwiseStem(ref_channels, embed),
            _PixelwiseStem(lr_channels, embed),
        ])
        self.mix = nn.Sequential(
            nn.Linear(3 * embed, 2 * embed), nn.LeakyReLU(0.1, inplace=True),
            nn.Linear(2 * embed, 2 * embed), nn.LeakyReLU(0.1, inplace=True),
        )
        self.heads = nn.ModuleList(
            nn.Linear(2 * embed, 2 * block_channels) for _ in range(num_blocks))
        for head in self.heads:
            nn.init.zeros_(head.weight)
            with torch.no_grad():
                head.bias[:block_channels] = 1.0
                head.bias[block_channels:] = 0.0

    def forward(self, fused: torch.Tensor, ref_feat: torch.Tensor,
                lr_center_feat: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
        pooled = torch.cat([stem(x) for stem, x in
                            zip(self.stems, (fused, ref_feat, lr_center_feat))], dim=1)
        v = self.mix(pooled)
        out = []
        for head in self.heads:
            sv = head(v)
            out.append((sv[:, :self.block_channels], sv[:, self.block_channels:]))
        return out


class RestorationNet(nn.Module):
    """Modulated residual backbone with pixel-shuffle upsampling.

    Output is r x the LR spatial dims; a bicubic skip of the LR image is
    added so the body only has to learn the residual.  Outputs are left
    unclamped (clamp at inference time).
    """

    def __init__(self, ratio: int, lr_feat_channels: int, ref_feat_channels: int,
                 channels: int = 32, num_blocks: int = 16):
        super().__init__()
        if ratio not in (2, 4):
            raise ConfigError(f"ratio must be 2 or 4, got {ratio}")
        self.ratio = ratio
        self.channels = channels
        self.fusion = nn.Conv2d(lr_feat_channels + ref_feat_channels, channels, 3, padding=1)
        self.blocks = nn.ModuleList(ResidualBlock(channels) for _ in range(num_blocks))
        self.body_out = nn.Conv2d(channels, channels, 3, padding=1)
        self.encoder = ModulationEncoder(channels, 3, 3, channels, num_blocks)
        stages = []
        for _ in range(ratio // 2):
            stages += [nn.Conv2d(channels, channels * 4, 3, padding=1), nn.PixelShuffle(2),
                       nn.LeakyReLU(0.1, inplace=True)]
        self.upsampler = nn.Sequential(*stages)
        self.final = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, aligned_lr: torch.Tensor, aligned_ref: torch.Tensor,
                ref_img: torch.Tensor, lr_img: torch.Tensor) -> torch.Tensor:
        if aligned_lr.shape[-2:] != aligned_ref.shape[-2:]:
            raise DimensionError(
                f"aligned maps disagree: {tuple(aligned_lr.shape)} vs {tuple(aligned_ref.shape)}")
        fused = self.fusion(torch.cat([aligned_lr, aligned_ref], dim=1))
        lr_center = center_crop_t(lr_img, self.ratio)
        mods = self.encoder(fused, ref_img, lr_center)
        h = fused
        for block, (scale, shift) in zip(self.blocks, mods):
            h = block(h, scale, shift)
        h = self.body_out(h) + fused
        h = self.final(self.upsampler(h))
        skip = F.interpolate(lr_img, scale_factor=self.ratio, mode="bicubic",
                             align_corners=False)
        return h + skip


def restore(aligned_lr: torch.Tensor, aligned_ref: torch.Tensor,
            ref_img: np.ndarray, lr_img: np.ndarray, net: RestorationNet) -> np.ndarray:
    """Image-space wrapper: runs the net and clamps the result to [0, 1]."""
    ref = torch.from_numpy(np.ascontiguousarray(ref_img.transpose(2, 0, 1)))[None].float()
    lr = torch.from_numpy(np.ascontiguousarray(lr_img.transpose(2, 0, 1)))[None].float()
    with torch.no_grad():
        out = net(aligned_lr, aligned_ref, ref, lr)
    return np.clip(out[0].permute(1, 2, 0).numpy(), 0.0, 1.0)
