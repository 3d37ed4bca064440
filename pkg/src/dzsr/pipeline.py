"""The assembled zooming network and its train/test execution graphs.

Training and inference share one forward implementation.  At test time the
guide images are simply absent: every alignment unit runs with zero offsets
(no estimator evaluation) and the reference is matched against the LR
features instead of pseudo-LR features.  The learned degradation network is
never touched at inference; `infer` does not even instantiate it.
"""

from __future__ import annotations

import time

import numpy as np
import torch
import torch.nn as nn

from .adastn import AdaSTNConfig, AlignmentStack
from .checkpoint import Checkpoint, load_checkpoint
from .config import TrainConfig, config_from_text
from .data import center_crop
from .dataset import list_sample_dirs, read_sample
from .errors import DimensionError
from .matching import MatchConfig, RefAligner
from .metrics import EvalReport, SampleScores, corner_mask, psnr, ssim
from .restoration import RestorationNet

_REF_MASK_SALT = 7919


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """[H, W, 3] float image -> [1, 3, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def to_image(t: torch.Tensor, clamp: bool = True) -> np.ndarray:
    """[1, 3, H, W] or [3, H, W] tensor -> [H, W, 3] float32 image."""
    if t.dim() == 4:
        t = t[0]
    img = t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return np.clip(img, 0.0, 1.0) if clamp else img


class ZoomModel(nn.Module):
    """LR + Ref -> SR.  Holds the stem, both alignment paths, restoration."""

    def __init__(self, cfg: TrainConfig, align_mode: str = "adastn"):
        super().__init__()
        self.cfg = cfg
        self.align_mode = align_mode
        c = cfg.feat_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(c, c, 3, padding=1),
        )
        self.stack = AlignmentStack(
            c, AdaSTNConfig(cfg.stages, cfg.zero_prob, cfg.est_channels), align_mode)
        self.ref_aligner = RefAligner(
            cfg.ratio,
            MatchConfig(cfg.match_patch, cfg.match_stride, cfg.match_channels),
            out_channels=cfg.channels,
            estimator_channels=cfg.est_channels,
            mode=align_mode)
        self.restoration = RestorationNet(
            cfg.ratio, lr_feat_channels=c, ref_feat_channels=cfg.channels,
            channels=cfg.channels, num_blocks=cfg.blocks)

    def estimator_call_count(self) -> int:
        n = sum(u.estimator_calls for u in self.stack.units)
        return n + self.ref_aligner.refine.estimator_calls

    def forward(self, lr_img: torch.Tensor, ref_img: torch.Tensor,
                stack_guide: torch.Tensor | None = None,
                ref_guide: torch.Tensor | None = None,
                training: bool = False, seed: int = 0,
                force_zero: bool = False) -> torch.Tensor:
        lr_feat = self.stem(lr_img)
        if training:
            guide = stack_guide if stack_guide is not None else lr_img
            rguide = ref_guide if ref_guide is not None else lr_img
            B = lr_img.shape[0]
            aligned_lr = self.stack(lr_feat, self.stem(guide), training=True,
                                    seed=seed, force_zero_all=force_zero)
            if force_zero:
                ref_mask = torch.ones(B, dtype=torch.bool)
            else:
                gen = torch.Generator().manual_seed(int(seed) + _REF_MASK_SALT)
                ref_mask = torch.rand(B, generator=gen) < self.cfg.zero_prob
            aligned_ref = self.ref_aligner(ref_img, rguide, training=True,
                                           zero_mask=ref_mask)
        else:
            aligned_lr = self.stack(lr_feat, None, training=False)
            aligned_ref = self.ref_aligner(ref_img, lr_img, training=False)
        return self.restoration(aligned_lr, aligned_ref, ref_img, lr_img)


def build_zoom_model(ckpt: Checkpoint) -> tuple[ZoomModel, TrainConfig]:
    cfg = config_from_text(ckpt.config_text)
    align_mode = (ckpt.extra or {}).get("align_mode", "adastn")
    model = ZoomModel(cfg, align_mode)
    model.load_state_dict(ckpt.state)
    model.eval()
    return model, cfg


def infer(short_focus: np.ndarray, telephoto: np.ndarray,
          zooming_ckpt: Checkpoint | str | tuple[ZoomModel, TrainConfig]) -> np.ndarray:
    """Run the test-time graph on one capture pair.

    The telephoto frame contributes only its center crop, which plays the
    reference role; the output covers the short-focus frame at telephoto
    resolution (ratio taken from the checkpoint config).
    """
    if isinstance(zooming_ckpt, str):
        zooming_ckpt = load_checkpoint(zooming_ckpt, expect_kind="zooming")
    if isinstance(zooming_ckpt, Checkpoint):
        model, cfg = build_zoom_model(zooming_ckpt)
    else:
        model, cfg = zooming_ckpt
    r = cfg.ratio
    sh, sw = short_focus.shape[:2]
    th, tw = telephoto.shape[:2]
    if (th, tw) != (sh * r, sw * r):
        raise DimensionError(
            f"telephoto {th}x{tw} must be ratio {r} x short focus {sh}x{sw}")
    ref = center_crop(telephoto, r)
    with torch.no_grad():
        sr = model(to_tensor(short_focus), to_tensor(ref), training=False)
    return to_image(sr, clamp=True)


def evaluate(dataset_dir: str,
             zooming_ckpt: Checkpoint | str | tuple[ZoomModel, TrainConfig]) -> EvalReport:
    """Full-image and corner-image PSNR/SSIM over a dataset with GT."""
    if isinstance(zooming_ckpt, str):
        zooming_ckpt = load_checkpoint(zooming_ckpt, expect_kind="zooming")
    if isinstance(zooming_ckpt, Checkpoint):
        pair = build_zoom_model(zooming_ckpt)
    else:
        pair = zooming_ckpt
    _, cfg = pair
    t0 = time.time()
    scores = []
    for d in list_sample_dirs(dataset_dir):
        sample = read_sample(d)
        sr = infer(sample.short_focus, sample.telephoto, pair)
        gt = sample.telephoto
        mask = corner_mask(gt.shape[0], gt.shape[1], cfg.ratio)
        scores.append(SampleScores(
            sample_id=d.rstrip("/").split("/")[-1],
            full_psnr=psnr(sr, gt), full_ssim=ssim(sr, gt),
            corner_psnr=psnr(sr, gt, mask), corner_ssim=ssim(sr, gt, mask)))
    return EvalReport(scores=scores, runtime_s=time.time() - t0, ratio=cfg.ratio)
