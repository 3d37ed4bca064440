"""Reference-to-GT alignment.

The reference frame depicts the central 1/r of the output field of view at
r-fold finer detail.  To bring its features into the output frame we:

1. extract features from the guide image (pseudo-LR while training, LR at
   test time) and from an r-fold downscaled copy of the reference,
2. match every guide position against all reference patches by cosine
   similarity and gather the winning patches (argmax; gradients flow through
   the gathered values only),
3. rearrange the full-resolution reference features by inverse pixel shuffle
   so they live on the guide grid, and paste them verbatim into the central
   window, where the reference content is exact by construction,
4. refine with a single alignment unit.
"""

from __future__ import annotations

import dataclasses

import torch
import torch.nn as nn
import torch.nn.functional as F

from .adastn import AdaSTN
from .errors import ConfigError, DimensionError


@dataclasses.dataclass
class MatchConfig:
    patch_size: int = 3
    stride: int = 1
    feature_channels: int = 32

    def __post_init__(self):
        if self.patch_size % 2 == 0 or self.patch_size < 1:
            raise ConfigError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")


@dataclasses.dataclass
class MatchResult:
    """Best reference patch per query position.

    index_map: [B, Hq, Wq] flat indices into the reference patch grid.
    score_map: [B, Hq, Wq] cosine similarities in [-1, 1].
    """

    index_map: torch.Tensor
    score_map: torch.Tensor
    query_size: tuple[int, int]
    ref_grid: tuple[int, int]


class FeatureExtractor(nn.Module):
    """Shared conv features for matching, trained with the main objective."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.channels = channels
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.net(img)


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x[None], True
    if x.dim() == 4:
        return x, False
    raise DimensionError(f"expected [C, H, W] or [B, C, H, W], got {tuple(x.shape)}")


def _grid_dims(h: int, w: int, patch: int, stride: int) -> tuple[int, int]:
    pad = patch // 2
    return ((h + 2 * pad - patch) // stride + 1,
            (w + 2 * pad - patch) // stride + 1)


def _unfold_patches(x: torch.Tensor, patch: int, stride: int) -> torch.Tensor:
    """Unfold with replicate padding so border patches carry edge values,
    keeping patch statistics (and constant inputs) unbiased at the border."""
    p = patch // 2
    if p:
        x = F.pad(x, (p, p, p, p), mode="replicate")
    return F.unfold(x, patch, stride=stride)


def patch_correlation_match(query: torch.Tensor, ref: torch.Tensor,
                            cfg: MatchConfig) -> MatchResult:
    """Cosine-similarity argmax of query patches over all reference patches.

    Ties are broken toward the smallest flat reference index.  The caller is
    responsible for bringing the reference to the query's content scale.
    """
    query, _ = _batched(query)
    ref, _ = _batched(ref)
    if query.shape[1] != ref.shape[1]:
        raise DimensionError(
            f"channel mismatch: query {query.shape[1]} vs ref {ref.shape[1]}")
    if ref.shape[-2] < cfg.patch_size or ref.shape[-1] < cfg.patch_size:
        raise DimensionError(
            f"ref {tuple(ref.shape[-2:])} smaller than one {cfg.patch_size}x{cfg.patch_size} patch")
    p, s = cfg.patch_size, cfg.stride
    qh, qw = _grid_dims(query.shape[-2], query.shape[-1], p, s)
    rh, rw = _grid_dims(ref.shape[-2], ref.shape[-1], p, s)

    qp = _unfold_patches(query, p, s)
    rp = _unfold_patches(ref, p, s)
    qn = qp / qp.norm(dim=1, keepdim=True).clamp(min=1e-12)
    rn = rp / rp.norm(dim=1, keepdim=True).clamp(min=1e-12)
    sim = torch.bmm(qn.transpose(1, 2), rn)          # [B, Lq, Lr]

    best = sim.max(dim=2).values
    lr_ = sim.shape[2]
    cand = sim >= best.unsqueeze(2)
    ar = torch.arange(lr_, device=sim.device).view(1, 1, lr_)
    idx = torch.where(cand, ar, lr_).min(dim=2).values

    B = query.shape[0]
    return MatchResult(index_map=idx.reshape(B, qh, qw).detach(),
                       score_map=best.reshape(B, qh, qw).detach(),
                       query_size=(query.shape[-2], query.shape[-1]),
                       ref_grid=(rh, rw))


def warp_ref_features(ref: torch.Tensor, match: MatchResult,
                      cfg: MatchConfig) -> torch.Tensor:
    """Gather matched reference patches into the query frame.

    Patches are overlap-added with fold and normalized by the contribution
    count, so overlapping placements are averaged.  Gradients flow into
    `ref` through the gathered values.
    """
    ref, squeeze = _batched(ref)
    p, s = cfg.patch_size, cfg.stride
    rh, rw = _grid_dims(ref.shape[-2], ref.shape[-1], p, s)
    if (rh, rw) != match.ref_grid:
        raise DimensionError(
            f"ref patch grid {(rh, rw)} does not match result grid {match.ref_grid}")
    idx = match.index_map
    if int(idx.max()) >= rh * rw or int(idx.min()) < 0:
        raise DimensionError("match indices exceed reference patch grid")

    rp = _unfold_patches(ref, p, s)                          # [B, C*p*p, Lr]
    B, D, _ = rp.shape
    flat_idx = idx.reshape(B, 1, -1).expand(B, D, -1)
    gathered = rp.gather(2, flat_idx)                        # [B, C*p*p, Lq]
    out = F.fold(gathered, output_size=match.query_size,
                 kernel_size=p, padding=p // 2, stride=s)
    counts = F.fold(torch.ones_like(gathered), output_size=match.query_size,
                    kernel_size=p, padding=p // 2, stride=s)
    out = out / counts.clamp(min=1.0)
    return out[0] if squeeze else out


def inverse_pixel_shuffle(feat: torch.Tensor, r: int) -> torch.Tensor:
    """Space-to-depth: [..., C, H, W] -> [..., C*r*r, H/r, W/r]."""
    h, w = feat.shape[-2], feat.shape[-1]
    if h % r != 0:
        raise DimensionError(f"height {h} not divisible by {r}")
    if w % r != 0:
        raise DimensionError(f"width {w} not divisible by {r}")
    return F.pixel_unshuffle(feat, r)


def center_paste(base: torch.Tensor, center: torch.Tensor) -> torch.Tensor:
    """Replace the centered window of `base` with `center`."""
    if base.shape[:-2] != center.shape[:-2]:
        raise DimensionError(
            f"channel mismatch: base {tuple(base.shape)} vs center {tuple(center.shape)}")
    bh, bw = base.shape[-2], base.shape[-1]
    ch, cw = center.shape[-2], center.shape[-1]
    if ch > bh or cw > bw:
        raise DimensionError(f"center {ch}x{cw} larger than base {bh}x{bw}")
    if (bh - ch) % 2 or (bw - cw) % 2:
        raise DimensionError(
            f"center {ch}x{cw} cannot be centered in base {bh}x{bw}")
    top, left = (bh - ch) // 2, (bw - cw) // 2
    out = base.clone()
    out[..., top:top + ch, left:left + cw] = center
    return out


class RefAligner(nn.Module):
    """Full reference alignment path: match, warp, center-paste, refine."""

    def __init__(self, ratio: int, cfg: MatchConfig, out_channels: int,
                 estimator_channels: int = 32, mode: str = "adastn"):
        super().__init__()
        self.ratio = ratio
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg.feature_channels)
        c = cfg.feature_channels
        self.refine = AdaSTN(c * ratio * ratio, c, out_channels,
                             estimator_channels, mode)

    def forward(self, ref_img: torch.Tensor, guide_img: torch.Tensor,
                training: bool, zero_mask: torch.Tensor | None = None) -> torch.Tensor:
        if ref_img.shape != guide_img.shape:
            raise DimensionError(
                f"ref {tuple(ref_img.shape)} and guide {tuple(guide_img.shape)} must match")
        r = self.ratio
        if ref_img.shape[-2] % r or ref_img.shape[-1] % r:
            raise DimensionError(
                f"ref dims {tuple(ref_img.shape[-2:])} not divisible by ratio {r}")

        guide_feat = self.extractor(guide_img)
        ref_feat = self.extractor(ref_img)
        ref_small = self.extractor(F.avg_pool2d(ref_img, r))
        ref_ips = inverse_pixel_shuffle(ref_feat, r)

        with torch.no_grad():
            match = patch_correlation_match(guide_feat.detach(), ref_small.detach(), self.cfg)
        warped = warp_ref_features(ref_ips, match, self.cfg)
        pasted = center_paste(warped, ref_ips)

        if training:
            return self.refine(pasted, guide_feat, zero_mask=zero_mask)
        return self.refine(pasted, force_zero=True)
