"""Two-stage training.

Stage 1 fits the degradation network alone: its clean pseudo-LR output is
matched to the real LR frame under mean-L1, with the centroid penalty
keeping every backbone kernel mass-centered so no content shift can sneak
in.  Stage 2 freezes it and trains the zooming network end to end; the
degradation net only supplies (noisy) pseudo-LR guide images and receives
no gradients.

Both loops are plain Adam over full batches sampled with a seeded
generator; with a fixed seed and single-threaded execution every run is
bit-reproducible.
"""

from __future__ import annotations

import math
import os

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig, align_mode_for, config_to_text
from .data import NoiseSpec, _noise_pipeline, augment_images
from .dataset import read_dataset
from .degradation import DegradationNet, centroid_loss, degradation_loss
from .errors import CheckpointError, DataError
from .losses import PerceptualExtractor, SWConfig, sr_loss
from .pipeline import ZoomModel

_SEED_SPAN = 2**31 - 1


def resolve_threads(cfg_threads: int = 0) -> int:
    """Thread cap: explicit config beats the DZSR_THREADS env var."""
    if cfg_threads > 0:
        return cfg_threads
    env = os.environ.get("DZSR_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 0


def _apply_threads(cfg: TrainConfig) -> None:
    n = resolve_threads(cfg.threads)
    if n > 0:
        torch.set_num_threads(n)


def noise_spec_from(cfg: TrainConfig) -> NoiseSpec:
    return NoiseSpec(
        gaussian_sigma_range=(cfg.noise_sigma_lo, cfg.noise_sigma_hi),
        jpeg_quality_range=(cfg.noise_jpeg_lo, cfg.noise_jpeg_hi),
        sensor_a_range=(cfg.noise_a_lo, cfg.noise_a_hi),
        sensor_b_range=(cfg.noise_b_lo, cfg.noise_b_hi))


def _load_samples(dataset_dir: str, cfg: TrainConfig):
    samples = read_dataset(dataset_dir)
    for s in samples:
        if s.ratio != cfg.ratio:
            raise DataError(
                f"dataset ratio {s.ratio} != config ratio {cfg.ratio}")
    return samples


def _sample_patch(rng: np.random.Generator, sample, cfg: TrainConfig):
    """One aligned (LR, GT) patch pair with shared augmentation."""
    r = cfg.ratio
    lh, lw = sample.short_focus.shape[:2]
    p = min(cfg.lr_patch, lh, lw)
    p -= p % r  # keep the patch center-croppable by r
    i = int(rng.integers(0, lh - p + 1))
    j = int(rng.integers(0, lw - p + 1))
    lr = sample.short_focus[i:i + p, j:j + p]
    gt = sample.telephoto[i * r:(i + p) * r, j * r:(j + p) * r]
    hf = bool(cfg.hflip and rng.integers(0, 2))
    vf = bool(cfg.vflip and rng.integers(0, 2))
    k = int(rng.integers(0, 4)) if cfg.rot90 else 0
    lr, gt = augment_images([lr, gt], hf, vf, k)
    return lr, gt


def _batch_tensors(rng, samples, cfg: TrainConfig):
    lrs, gts = [], []
    for _ in range(cfg.batch):
        s = samples[int(rng.integers(0, len(samples)))]
        lr, gt = _sample_patch(rng, s, cfg)
        lrs.append(lr.transpose(2, 0, 1))
        gts.append(gt.transpose(2, 0, 1))
    lr_t = torch.from_numpy(np.ascontiguousarray(np.stack(lrs))).float()
    gt_t = torch.from_numpy(np.ascontiguousarray(np.stack(gts))).float()
    return lr_t, gt_t


def _lr_for_epoch(cfg: TrainConfig, epoch: int, total: int) -> float:
    return cfg.lr if epoch < total // 2 else cfg.lr_final


def _batch_noise(clean: torch.Tensor, spec: NoiseSpec, rng: np.random.Generator):
    """Draw per-sample noise for a batch of clean pseudo-LR images.

    Returns (noisy, residual) tensors; noisy = clip(pipeline(clip(clean)))
    computed off-graph, residual defined against the clipped clean copy.
    """
    noisy_list, resid_list = [], []
    arr = clean.detach().clamp(0, 1).permute(0, 2, 3, 1).numpy()
    for b in range(arr.shape[0]):
        img = np.ascontiguousarray(arr[b])
        out, _ = _noise_pipeline(img, spec, int(rng.integers(0, _SEED_SPAN)))
        noisy_list.append(out.transpose(2, 0, 1))
        resid_list.append((out - img).transpose(2, 0, 1))
    noisy = torch.from_numpy(np.ascontiguousarray(np.stack(noisy_list))).float()
    resid = torch.from_numpy(np.ascontiguousarray(np.stack(resid_list))).float()
    return noisy, resid


def train_degradation(dataset_dir: str, cfg: TrainConfig,
                      out_path: str | None = None, log=print):
    """Stage 1: fit the degradation network.  Returns (Checkpoint, history).

    history is a list of per-epoch dicts with the mean data term and
    centroid term.
    """
    _apply_threads(cfg)
    samples = _load_samples(dataset_dir, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([int(cfg.seed), 1])
    net = DegradationNet(cfg.ratio, cfg.deg_channels)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))
    spec = noise_spec_from(cfg)
    steps = max(1, math.ceil(len(samples) / cfg.batch))
    history = []
    for epoch in range(cfg.stage1_epochs):
        for group in opt.param_groups:
            group["lr"] = _lr_for_epoch(cfg, epoch, cfg.stage1_epochs)
        data_sum = cent_sum = 0.0
        for _ in range(steps):
            lr_t, gt_t = _batch_tensors(rng, samples, cfg)
            clean = net(gt_t, lr_t)
            _, resid = _batch_noise(clean, spec, rng)
            pseudo_noisy = clean + resid
            loss = degradation_loss(pseudo_noisy, lr_t, resid,
                                    net.backbone_kernels(), cfg.lambda_centroid)
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                data_sum += float((clean - lr_t).abs().mean())
                cent_sum += float(sum(centroid_loss(w) for w in net.backbone_kernels()))
        history.append({"epoch": epoch, "data": data_sum / steps,
                        "centroid": cent_sum / steps})
        log(f"[stage1] epoch {epoch:3d}  l1 {history[-1]['data']:.5f}  "
            f"centroid {history[-1]['centroid']:.6f}")
    ckpt = Checkpoint(kind="degradation", state=net.state_dict(),
                      config_fingerprint=cfg.fingerprint("degradation"),
                      config_text=config_to_text(cfg))
    if out_path:
        save_checkpoint(out_path, ckpt)
    return ckpt, history


def _guides_for(ablation: str, pseudo, lr_img):
    stack_guide = pseudo if ablation in ("full", "no_ref_align", "stn", "deform_direct") else lr_img
    ref_guide = pseudo if ablation in ("full", "no_lr_align", "stn", "deform_direct") else lr_img
    return stack_guide, ref_guide


def _needs_pseudo(ablation: str) -> bool:
    return ablation != "none"


def train_zooming(dataset_dir: str, degradation_ckpt: Checkpoint | None,
                  cfg: TrainConfig, ablation: str = "full",
                  out_path: str | None = None, log=print):
    """Stage 2: train the zooming network.  Returns (Checkpoint, info).

    `ablation` selects the training-graph variant: which alignment guides
    use pseudo-LR, and which offset parameterization the units use.
    info carries the loss history and probe counters.
    """
    _apply_threads(cfg)
    align_mode = align_mode_for(ablation)
    samples = _load_samples(dataset_dir, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([int(cfg.seed), 2])

    deg_net = None
    if _needs_pseudo(ablation):
        if degradation_ckpt is None:
            raise CheckpointError(f"ablation {ablation!r} needs a degradation checkpoint")
        if degradation_ckpt.config_fingerprint != cfg.fingerprint("degradation"):
            raise CheckpointError(
                "degradation checkpoint fingerprint "
                f"{degradation_ckpt.config_fingerprint} does not match config "
                f"{cfg.fingerprint('degradation')}")
        deg_net = DegradationNet(cfg.ratio, cfg.deg_channels)
        deg_net.load_state_dict(degradation_ckpt.state)
        deg_net.eval()
        for p in deg_net.parameters():
            p.requires_grad_(False)

    model = ZoomModel(cfg, align_mode)
    perceptual = PerceptualExtractor(seed=cfg.perceptual_seed)
    sw_cfg = SWConfig(num_projections=cfg.sw_projections)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))
    spec = noise_spec_from(cfg)
    steps = max(1, math.ceil(len(samples) / cfg.batch))
    history = []
    step_counter = 0
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = _lr_for_epoch(cfg, epoch, cfg.epochs)
        loss_sum = 0.0
        for _ in range(steps):
            lr_t, gt_t = _batch_tensors(rng, samples, cfg)
            ref_t = _center_crop_batch(gt_t, cfg.ratio)
            pseudo = None
            if deg_net is not None:
                with torch.no_grad():
                    clean = deg_net(gt_t, lr_t)
                pseudo, _ = _batch_noise(clean, spec, rng)
            stack_guide, ref_guide = _guides_for(ablation, pseudo, lr_t)
            step_seed = int(rng.integers(0, _SEED_SPAN))
            sr = model(lr_t, ref_t, stack_guide, ref_guide,
                       training=True, seed=step_seed)
            loss = sr_loss(sr, gt_t, perceptual, sw_cfg, seed=step_seed,
                           sw_weight=cfg.lambda_sw)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item()
            step_counter += 1
        history.append({"epoch": epoch, "loss": loss_sum / steps})
        log(f"[stage2/{ablation}] epoch {epoch:3d}  loss {history[-1]['loss']:.5f}")

    ckpt = Checkpoint(kind="zooming", state=model.state_dict(),
                      config_fingerprint=cfg.fingerprint("zooming", align_mode),
                      config_text=config_to_text(cfg),
                      extra={"align_mode": align_mode, "ablation": ablation})
    if out_path:
        save_checkpoint(out_path, ckpt)
    info = {
        "history": history,
        "degradation_calls": 0 if deg_net is None else deg_net.forward_calls,
        "estimator_calls": model.estimator_call_count(),
        "steps": step_counter,
    }
    return ckpt, info


def _center_crop_batch(t: torch.Tensor, ratio: int) -> torch.Tensor:
    h, w = t.shape[-2], t.shape[-1]
    ch, cw = h // ratio, w // ratio
    top, left = (h - ch) // 2, (w - cw) // 2
    return t[..., top:top + ch, left:left + cw]
