"""Image quality metrics and the full/corner evaluation report.

PSNR uses MAX = 1.0 over all RGB values; identical images report inf.
SSIM follows the standard constants (K1 = 0.01, K2 = 0.03, 11x11 Gaussian
window, sigma = 1.5) computed per channel over valid window positions and
averaged.  For images smaller than the window the window shrinks to the
largest odd size that fits.

The corner region is everything outside the centered H/r x W/r window,
i.e. the area not covered by the reference frame's field of view.
"""

from __future__ import annotations

import dataclasses

import cv2
import numpy as np

from .errors import DimensionError

_K1, _K2 = 0.01, 0.03
_WINDOW, _SIGMA = 11, 1.5


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10*log10(1 / MSE) in dB; inf when the images agree exactly.

    An optional boolean [H, W] mask restricts the MSE to selected pixels.
    """
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a.astype(np.float64) - b.astype(np.float64)) ** 2
    if mask is not None:
        if mask.shape != a.shape[:2]:
            raise DimensionError(f"mask shape {mask.shape} != image {a.shape[:2]}")
        diff = diff[mask]
    mse = float(diff.mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (ax / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    full = cv2.filter2D(img, -1, kernel, borderType=cv2.BORDER_CONSTANT)
    m = kernel.shape[0] // 2
    return full[m:img.shape[0] - m, m:img.shape[1] - m]


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean SSIM over valid window positions, averaged across channels.

    With a mask, only windows whose center pixel is selected contribute.
    """
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    win = min(_WINDOW, h if h % 2 else h - 1, w if w % 2 else w - 1)
    if win < 3:
        raise DimensionError(f"image {h}x{w} too small for SSIM")
    kernel = _gaussian_kernel(win, _SIGMA)
    m = win // 2
    c1, c2 = _K1 ** 2, _K2 ** 2

    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    vals = []
    for c in range(a.shape[2]):
        x = a[..., c].astype(np.float64)
        y = b[..., c].astype(np.float64)
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x ** 2
        var_y = _filter_valid(y * y, kernel) - mu_y ** 2
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        smap = ((2 * mu_x * mu_y + c1) * (2 * cov + c2) /
                ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)))
        if mask is not None:
            sel = mask[m:h - m, m:w - m]
            if not sel.any():
                raise DimensionError("mask selects no valid SSIM windows")
            smap = smap[sel]
        vals.append(float(smap.mean()))
    return float(np.mean(vals))


def corner_mask(h: int, w: int, ratio: int) -> np.ndarray:
    """True outside the centered h/ratio x w/ratio window."""
    if h % ratio or w % ratio:
        raise DimensionError(f"dims {h}x{w} not divisible by ratio {ratio}")
    ch, cw = h // ratio, w // ratio
    top, left = (h - ch) // 2, (w - cw) // 2
    mask = np.ones((h, w), dtype=bool)
    mask[top:top + ch, left:left + cw] = False
    return mask


@dataclasses.dataclass
class SampleScores:
    sample_id: str
    full_psnr: float
    full_ssim: float
    corner_psnr: float
    corner_ssim: float


@dataclasses.dataclass
class EvalReport:
    scores: list[SampleScores]
    runtime_s: float
    ratio: int

    def _mean(self, attr: str) -> tuple[float, int]:
        vals = [getattr(s, attr) for s in self.scores]
        finite = [v for v in vals if np.isfinite(v)]
        n_inf = len(vals) - len(finite)
        mean = float(np.mean(finite)) if finite else float("inf")
        return mean, n_inf

    def summary(self) -> str:
        lines = [f"samples: {len(self.scores)}  ratio: {self.ratio}  "
                 f"runtime: {self.runtime_s:.1f}s"]
        for attr, label in (("full_psnr", "full  PSNR"), ("full_ssim", "full  SSIM"),
                            ("corner_psnr", "corner PSNR"), ("corner_ssim", "corner SSIM")):
            mean, n_inf = self._mean(attr)
            note = f" ({n_inf} inf excluded)" if n_inf else ""
            lines.append(f"{label}: {mean:.4f}{note}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        def fmt(v: float) -> str:
            return "inf" if np.isinf(v) else f"{v:.6f}"

        rows = ["sample_id,full_psnr,full_ssim,corner_psnr,corner_ssim"]
        for s in self.scores:
            rows.append(",".join([s.sample_id, fmt(s.full_psnr), fmt(s.full_ssim),
                                  fmt(s.corner_psnr), fmt(s.corner_ssim)]))
        return "\n".join(rows) + "\n"

    def mean_full_psnr(self) -> float:
        return self._mean("full_psnr")[0]
