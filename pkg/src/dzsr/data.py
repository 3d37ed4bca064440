"""Dual-zoom sample construction: crops, degradation, noise, color matching.

A sample bundles the two views of one capture after pre-processing:

* ``telephoto`` — the ground-truth frame [H, W, 3].  It is the latent scene
  warped by a bounded smooth displacement field that stands in for the
  residual misalignment left over after flow-based registration.
* ``short_focus`` — the low-resolution frame [H/r, W/r, 3], produced by
  Gaussian blur, r-fold area downsampling and stochastic noise injection.

Both views cover the same field of view; the telephoto center crop (ratio r)
covers the same scene as the center crop of the short-focus frame and serves
as the reference image downstream.

Images are float32 in [0, 1].  Generated images are snapped to the 16-bit
grid (k/65535) so that writing to 16-bit PNG and reading back is the
identity; all generation is a pure function of (seed, config).
"""

from __future__ import annotations

import dataclasses
import warnings

import cv2
import numpy as np

from .errors import ConfigError, DimensionError

_U16_MAX = np.float32(65535.0)


def u16_to_unit(u: np.ndarray) -> np.ndarray:
    """uint16 image -> float32 in [0, 1]."""
    return u.astype(np.float32) / _U16_MAX


def unit_to_u16(img: np.ndarray) -> np.ndarray:
    """float32 [0, 1] image -> uint16, round-to-nearest."""
    return np.round(np.clip(img, 0.0, 1.0) * float(_U16_MAX)).astype(np.uint16)


def quantize16(img: np.ndarray) -> np.ndarray:
    """Snap a float image to the 16-bit storage grid (idempotent)."""
    return u16_to_unit(unit_to_u16(img))


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"{name} must be [H, W, 3], got {img.shape}")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise DimensionError(f"{name} must be at least 8x8, got {img.shape[:2]}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    return img


def center_crop(img: np.ndarray, ratio: int) -> np.ndarray:
    """Crop the centered H/ratio x W/ratio window.

    Output pixel (i, j) equals input pixel (i + (H - H/ratio)//2,
    j + (W - W/ratio)//2).  ratio=1 returns an identical copy.
    """
    if ratio < 1:
        raise ConfigError(f"crop ratio must be >= 1, got {ratio}")
    h, w = img.shape[0], img.shape[1]
    if h % ratio != 0:
        raise DimensionError(f"height {h} not divisible by ratio {ratio}")
    if w % ratio != 0:
        raise DimensionError(f"width {w} not divisible by ratio {ratio}")
    ch, cw = h // ratio, w // ratio
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[top:top + ch, left:left + cw].copy()


def area_downsample(img: np.ndarray, ratio: int) -> np.ndarray:
    """Downsample by block-averaging r x r cells (shift-free)."""
    h, w = img.shape[0], img.shape[1]
    if h % ratio != 0 or w % ratio != 0:
        raise DimensionError(f"dims {h}x{w} not divisible by ratio {ratio}")
    out = img.reshape(h // ratio, ratio, w // ratio, ratio, -1).mean(axis=(1, 3))
    return out.astype(img.dtype)


def bicubic_upsample(img: np.ndarray, ratio: int) -> np.ndarray:
    """Bicubic x ratio upsampling, clipped to [0, 1]."""
    h, w = img.shape[0], img.shape[1]
    up = cv2.resize(img, (w * ratio, h * ratio), interpolation=cv2.INTER_CUBIC)
    return np.clip(up, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Isotropic Gaussian blur; sigma <= 0 is the identity."""
    if sigma <= 0:
        return img.copy()
    k = 2 * int(np.ceil(3.0 * sigma)) + 1
    return cv2.GaussianBlur(img, (k, k), sigmaX=sigma, sigmaY=sigma,
                            borderType=cv2.BORDER_REFLECT)


def color_match(src: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Affine-map src per channel so its mean/std match the target's.

    A zero-variance source channel gets a pure mean shift (with a warning).
    The result is clipped to [0, 1] after matching.
    """
    check_image(src, "src")
    check_image(target, "target")
    out = np.empty_like(src, dtype=np.float32)
    for c in range(3):
        s = src[..., c].astype(np.float64)
        t = target[..., c].astype(np.float64)
        s_mu, s_sd = s.mean(), s.std()
        t_mu, t_sd = t.mean(), t.std()
        if s_sd < 1e-12:
            warnings.warn(f"channel {c} has zero variance; applying mean shift only")
            out[..., c] = (s + (t_mu - s_mu)).astype(np.float32)
        else:
            out[..., c] = ((s - s_mu) * (t_sd / s_sd) + t_mu).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class NoiseSpec:
    """Ranges for the three-stage noise pipeline.

    Stages are applied in a random order: additive Gaussian noise, a JPEG
    encode/decode round trip, and signal-dependent sensor noise with
    variance a*x + b.  A stage whose drawn parameters are degenerate
    (sigma == 0, quality >= 100, a == b == 0) is skipped, so a fully
    degenerate spec leaves the image untouched.
    """

    gaussian_sigma_range: tuple[float, float] = (5.0 / 255.0, 30.0 / 255.0)
    jpeg_quality_range: tuple[int, int] = (60, 95)
    sensor_a_range: tuple[float, float] = (1e-4, 1e-3)
    sensor_b_range: tuple[float, float] = (1e-6, 1e-5)
    order_seed: int = 0

    def __post_init__(self):
        for name in ("gaussian_sigma_range", "jpeg_quality_range",
                     "sensor_a_range", "sensor_b_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"{name} is empty: [{lo}, {hi}]")
        if self.gaussian_sigma_range[0] < 0:
            raise ConfigError("gaussian sigma must be >= 0")
        qlo, qhi = self.jpeg_quality_range
        if qlo < 1 or qhi > 100:
            raise ConfigError(f"jpeg quality must lie in [1, 100], got [{qlo}, {qhi}]")

    @staticmethod
    def disabled() -> "NoiseSpec":
        return NoiseSpec(gaussian_sigma_range=(0.0, 0.0),
                         jpeg_quality_range=(100, 100),
                         sensor_a_range=(0.0, 0.0),
                         sensor_b_range=(0.0, 0.0))


def jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode through JPEG at the given quality (8-bit path)."""
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    ok, enc = cv2.imencode(".jpg", u8[..., ::-1], [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    dec = cv2.imdecode(enc, cv2.IMREAD_COLOR)[..., ::-1]
    return dec.astype(np.float32) / np.float32(255.0)


def _noise_pipeline(img: np.ndarray, spec: NoiseSpec, seed: int):
    rng = np.random.default_rng([int(spec.order_seed), int(seed)])
    order = [str(s) for s in rng.permutation(["gaussian", "jpeg", "sensor"])]
    sigma = float(rng.uniform(*spec.gaussian_sigma_range))
    quality = int(rng.integers(spec.jpeg_quality_range[0], spec.jpeg_quality_range[1] + 1))
    a = float(rng.uniform(*spec.sensor_a_range))
    b = float(rng.uniform(*spec.sensor_b_range))
    x = img.astype(np.float32).copy()
    for stage in order:
        if stage == "gaussian" and sigma > 0:
            x += rng.standard_normal(x.shape).astype(np.float32) * np.float32(sigma)
        elif stage == "jpeg" and quality < 100:
            x = jpeg_roundtrip(x, quality)
        elif stage == "sensor" and (a > 0 or b > 0):
            var = np.clip(a * x + b, 0.0, None)
            x += rng.standard_normal(x.shape).astype(np.float32) * np.sqrt(var, dtype=np.float32)
    meta = {"order": ",".join(order), "sigma": sigma, "quality": quality,
            "sensor_a": a, "sensor_b": b}
    return np.clip(x, 0.0, 1.0), meta


def _exact_residual(img: np.ndarray, noisy: np.ndarray):
    """Nudge the residual so img + residual lands in [0, 1] bitwise.

    float32 a + (b - a) can miss b by an ulp when |b - a| dwarfs a; the
    returned noisy image is therefore *defined* as img + residual, with the
    residual stepped by single ulps where that sum would leave [0, 1].
    """
    r = (noisy - img).astype(np.float32)
    for _ in range(4):
        nb = (img + r).astype(np.float32)
        over = nb > 1.0
        under = nb < 0.0
        if not (over.any() or under.any()):
            return nb, r
        r = np.where(over, np.nextafter(r, np.float32(-np.inf), dtype=np.float32), r)
        r = np.where(under, np.nextafter(r, np.float32(np.inf), dtype=np.float32), r)
    nb = np.clip(img + r, 0.0, 1.0).astype(np.float32)
    return nb, (nb - img).astype(np.float32)


def inject_noise(img: np.ndarray, spec: NoiseSpec, seed: int):
    """Apply the stochastic noise pipeline.

    Returns (noisy, residual) with ``img + residual == noisy`` holding
    bitwise and noisy clamped to [0, 1].
    """
    check_image(img, "image")
    raw, _ = _noise_pipeline(img, spec, seed)
    return _exact_residual(img, raw)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------

def smooth_warp_field(shape: tuple[int, int], bound: float, seed: int,
                      cells: int = 4) -> np.ndarray:
    """Smooth random displacement field [H, W, 2] with |components| <= bound.

    Built from a coarse grid of Gaussian draws, bicubically upsampled, then
    rescaled so the largest absolute component hits ~bound.  bound = 0
    returns an all-zero field.
    """
    if bound < 0:
        raise ConfigError(f"warp bound must be >= 0, got {bound}")
    h, w = shape
    if bound == 0:
        return np.zeros((h, w, 2), dtype=np.float32)
    rng = np.random.default_rng(int(seed))
    coarse = rng.standard_normal((cells, cells, 2)).astype(np.float32)
    field = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    peak = float(np.abs(field).max())
    if peak > 0:
        field *= np.float32(bound / peak)
    return field.astype(np.float32)


def apply_warp(img: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Backward-warp: out(i, j) = img(i + field[i,j,0], j + field[i,j,1]).

    Bilinear sampling with edge clamping.  A zero field reproduces the
    input bit-exactly.
    """
    h, w = img.shape[0], img.shape[1]
    if field.shape[:2] != (h, w) or field.shape[2] != 2:
        raise DimensionError(f"field shape {field.shape} does not match image {img.shape}")
    yy, xx = np.mgrid[0:h, 0:w]
    py = np.clip(yy + field[..., 0].astype(np.float64), 0, h - 1)
    px = np.clip(xx + field[..., 1].astype(np.float64), 0, w - 1)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (py - y0).astype(np.float32)[..., None]
    fx = (px - x0).astype(np.float32)[..., None]
    v00, v01 = img[y0, x0], img[y0, x1]
    v10, v11 = img[y1, x0], img[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class DualZoomSample:
    """One training/eval record of a dual-zoom capture pair."""

    short_focus: np.ndarray          # [H/r, W/r, 3] noisy LR
    telephoto: np.ndarray            # [H, W, 3] ground truth
    ratio: int
    true_warp: np.ndarray            # [H, W, 2] displacement (pixels)
    gen_seed: int
    degradation_meta: dict
    lr_clean: np.ndarray | None = None   # noise-free LR, kept for oracles
    residual: np.ndarray | None = None   # short_focus - lr_clean

    def validate(self) -> "DualZoomSample":
        check_image(self.short_focus, "short_focus")
        check_image(self.telephoto, "telephoto")
        sh, sw = self.short_focus.shape[:2]
        th, tw = self.telephoto.shape[:2]
        if (th, tw) != (sh * self.ratio, sw * self.ratio):
            raise DimensionError(
                f"telephoto {th}x{tw} is not ratio {self.ratio} x short focus {sh}x{sw}")
        if self.true_warp.shape != (th, tw, 2):
            raise DimensionError(f"warp shape {self.true_warp.shape} != ({th}, {tw}, 2)")
        if not np.isfinite(self.true_warp).all():
            raise ValueError("warp field contains non-finite values")
        return self


def make_dualzoom_pair(hr: np.ndarray, ratio: int, warp_bound: float,
                       noise: NoiseSpec, seed: int,
                       blur_sigma_range: tuple[float, float] = (0.8, 2.4)) -> DualZoomSample:
    """Derive a short-focus/telephoto pair from one clean scene.

    telephoto = warp(hr) with a smooth field bounded by warp_bound;
    short_focus = noise(blur(hr) area-downsampled by ratio).  hr dims must
    be divisible by ratio**2 so the short-focus frame still center-crops
    cleanly by ratio.  Deterministic in (seed, config).
    """
    check_image(hr, "hr")
    if warp_bound < 0:
        raise ConfigError(f"warp bound must be >= 0, got {warp_bound}")
    if blur_sigma_range[1] < blur_sigma_range[0] or blur_sigma_range[0] < 0:
        raise ConfigError(f"invalid blur sigma range {blur_sigma_range}")
    h, w = hr.shape[:2]
    r2 = ratio * ratio
    if h % r2 != 0:
        raise DimensionError(f"height {h} not divisible by ratio^2 = {r2}")
    if w % r2 != 0:
        raise DimensionError(f"width {w} not divisible by ratio^2 = {r2}")

    hr = quantize16(hr)
    rng = np.random.default_rng([int(seed), 101])
    warp_seed = int(rng.integers(0, 2**31 - 1))
    noise_seed = int(rng.integers(0, 2**31 - 1))
    sigma = float(rng.uniform(*blur_sigma_range))

    field = smooth_warp_field((h, w), warp_bound, warp_seed)
    telephoto = quantize16(apply_warp(hr, field))

    lr_clean = quantize16(area_downsample(gaussian_blur(hr, sigma), ratio))
    noisy_raw, noise_meta = _noise_pipeline(lr_clean, noise, noise_seed)
    short_focus = quantize16(noisy_raw)
    residual = short_focus - lr_clean

    meta = {"seed": int(seed), "ratio": int(ratio), "warp_bound": float(warp_bound),
            "blur_sigma": sigma, "warp_seed": warp_seed, "noise_seed": noise_seed}
    meta.update(noise_meta)
    return DualZoomSample(short_focus=short_focus, telephoto=telephoto, ratio=int(ratio),
                          true_warp=field, gen_seed=int(seed), degradation_meta=meta,
                          lr_clean=lr_clean, residual=residual).validate()


# ---------------------------------------------------------------------------
# Geometry-consistent augmentation
# ---------------------------------------------------------------------------

def augment_images(imgs: list[np.ndarray], hflip: bool, vflip: bool, k_rot: int):
    """Apply the same flip/rot90 to every image in the list."""
    out = []
    for im in imgs:
        x = im
        if hflip:
            x = x[:, ::-1]
        if vflip:
            x = x[::-1, :]
        x = np.rot90(x, k_rot % 4, axes=(0, 1))
        out.append(np.ascontiguousarray(x))
    return out


def augment_warp(field: np.ndarray, hflip: bool, vflip: bool, k_rot: int) -> np.ndarray:
    """Transform a displacement field consistently with augment_images.

    The array layout follows the image transform; vector components are
    remapped so that warping the augmented image with the augmented field
    equals augmenting the warped image.
    """
    f = field
    if hflip:
        f = f[:, ::-1].copy()
        f[..., 1] = -f[..., 1]
    if vflip:
        f = f[::-1, :].copy()
        f[..., 0] = -f[..., 0]
    for _ in range(k_rot % 4):
        # np.rot90 maps old (i, j) -> new (W-1-j, i); displacement (dy, dx)
        # becomes (-dx, dy) in the rotated frame.
        f = np.rot90(f, 1, axes=(0, 1)).copy()
        dy = f[..., 0].copy()
        f[..., 0] = -f[..., 1]
        f[..., 1] = dy
    return np.ascontiguousarray(f)
