"""Training objective: mean-L1 plus a sliced Wasserstein feature term.

The sliced Wasserstein distance compares two feature maps as distributions:
flatten each to [C, H*W], project onto random unit directions, sort each
projection, and take the mean absolute difference of the order statistics.
Sorting makes the distance exactly zero for any spatial permutation, which
is what makes it robust to the residual misalignment between output and
target.

Features come from a fixed (frozen, seeded) three-scale convolutional
pyramid; the interface accepts any extractor with the same call signature,
so externally pretrained features can be swapped in.
"""

from __future__ import annotations

import dataclasses

import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError


@dataclasses.dataclass
class SWConfig:
    """num_projections = 0 draws one direction per feature channel."""

    num_projections: int = 0
    reduction: str = "mean"

    def __post_init__(self):
        if self.num_projections < 0:
            raise ConfigError(f"num_projections must be >= 0, got {self.num_projections}")
        if self.reduction != "mean":
            raise ConfigError(f"only 'mean' reduction is supported, got {self.reduction!r}")


def projection_matrix(num_projections: int, channels: int, seed: int,
                      dtype=torch.float32) -> torch.Tensor:
    """[C', C] matrix with rows drawn uniformly on the unit sphere."""
    gen = torch.Generator().manual_seed(int(seed))
    m = torch.randn(num_projections, channels, generator=gen, dtype=dtype)
    return m / m.norm(dim=1, keepdim=True).clamp(min=1e-12)


def sliced_wasserstein(u: torch.Tensor, v: torch.Tensor, cfg: SWConfig | None = None,
                       seed: int = 0, matrix: torch.Tensor | None = None) -> torch.Tensor:
    """Sliced Wasserstein-1 distance between two feature maps.

    u, v: [C, H, W] or [B, C, H, W] with identical shapes.  A fresh
    projection matrix is drawn from `seed` unless one is supplied.  Batched
    inputs are reduced by the mean over samples.
    """
    if cfg is None:
        cfg = SWConfig()
    if u.shape != v.shape:
        raise DimensionError(f"shape mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    squeeze = u.dim() == 3
    if squeeze:
        u, v = u[None], v[None]
    if u.dim() != 4:
        raise DimensionError(f"expected [C, H, W] or [B, C, H, W], got {tuple(u.shape)}")
    B, C, H, W = u.shape
    if matrix is None:
        k = cfg.num_projections if cfg.num_projections > 0 else C
        matrix = projection_matrix(k, C, seed, dtype=u.dtype).to(u.device)
    elif matrix.shape[-1] != C:
        raise DimensionError(f"projection matrix columns {matrix.shape[-1]} != channels {C}")

    uf = u.reshape(B, C, H * W)
    vf = v.reshape(B, C, H * W)
    up = torch.einsum("kc,bcn->bkn", matrix, uf)
    vp = torch.einsum("kc,bcn->bkn", matrix, vf)
    us, _ = torch.sort(up, dim=2)
    vs, _ = torch.sort(vp, dim=2)
    return (us - vs).abs().mean()


class PerceptualExtractor(nn.Module):
    """Frozen random conv pyramid; one feature map per scale (1x, 1/2, 1/4)."""

    def __init__(self, widths: tuple[int, ...] = (16, 32, 64), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.widths = tuple(widths)
        blocks = []
        in_ch = 3
        for i, w in enumerate(widths):
            conv1 = nn.Conv2d(in_ch, w, 3, padding=1, stride=1 if i == 0 else 2)
            conv2 = nn.Conv2d(w, w, 3, padding=1)
            for conv in (conv1, conv2):
                fan_in = conv.in_channels * 9
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                      * (2.0 / fan_in) ** 0.5)
                    conv.bias.zero_()
            blocks.append(nn.Sequential(conv1, nn.LeakyReLU(0.2), conv2, nn.LeakyReLU(0.2)))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = img
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        return feats


def perceptual_features(img: torch.Tensor, ext: PerceptualExtractor) -> list[torch.Tensor]:
    """Fixed multi-scale features; gradients flow to `img` only."""
    return ext(img)


def sr_loss(y_hat: torch.Tensor, target: torch.Tensor, ext: PerceptualExtractor,
            cfg: SWConfig | None = None, seed: int = 0,
            sw_weight: float = 0.08) -> torch.Tensor:
    """mean-L1 + sw_weight * (sliced Wasserstein averaged over scales)."""
    if y_hat.shape != target.shape:
        raise DimensionError(f"shape mismatch: {tuple(y_hat.shape)} vs {tuple(target.shape)}")
    loss = (y_hat - target).abs().mean()
    if sw_weight != 0.0:
        fy = ext(y_hat)
        ft = ext(target)
        sw = y_hat.new_zeros(())
        for s, (a, b) in enumerate(zip(fy, ft)):
            sw = sw + sliced_wasserstein(a, b, cfg, seed=int(seed) + s)
        loss = loss + sw_weight * sw / len(fy)
    return loss
