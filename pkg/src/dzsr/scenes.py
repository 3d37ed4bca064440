"""Procedural test scenes for the dual-zoom pipeline.

Scenes are built from analytic primitives (soft-edged rectangles and
ellipses, sinusoidal gratings, feathered line segments) composited over a
smooth background ramp.  Edges are feathered by ~1 px so the images are
band-limited enough for resampling comparisons, while the shape boundaries
and gratings still carry the high-frequency content that makes
super-resolution quality measurable.

All generators are pure functions of (seed, size): calling twice with the
same arguments returns bit-identical arrays.  Output is float32 in [0, 1],
snapped to the 16-bit storage grid.
"""

from __future__ import annotations

import numpy as np

from .data import quantize16
from .errors import DimensionError

# Element counts scale with scene area relative to this reference edge.
_REF_EDGE = 256.0


def _soft_step(d: np.ndarray, feather: float) -> np.ndarray:
    """Smooth 0->1 transition of width ~feather around d = 0."""
    return 1.0 / (1.0 + np.exp(np.clip(-d / max(feather, 1e-3), -30.0, 30.0)))


def _rot_coords(yy, xx, cy, cx, theta):
    ys, xs = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    return c * ys + s * xs, -s * ys + c * xs


def _rect_mask(yy, xx, rng, scale):
    cy = rng.uniform(0, yy.shape[0])
    cx = rng.uniform(0, xx.shape[1])
    hh = rng.uniform(0.03, 0.18) * scale
    hw = rng.uniform(0.03, 0.18) * scale
    theta = rng.uniform(0, np.pi)
    feather = rng.uniform(0.6, 1.4)
    u, v = _rot_coords(yy, xx, cy, cx, theta)
    return _soft_step(hh - np.abs(u), feather) * _soft_step(hw - np.abs(v), feather)

def _ellipse_mask(yy, xx, rng, scale):
    cy = rng.uniform(0, yy.shape[0])
    cx = rng.uniform(0, xx.shape[1])
    ry = rng.uniform(0.03, 0.16) * scale
    rx = rng.uniform(0.03, 0.16) * scale
    theta = rng.uniform(0, np.pi)
    feather = rng.uniform(0.6, 1.4)
    u, v = _rot_coords(yy, xx, cy, cx, theta)
    # Signed distance approximation scaled to pixels at the boundary.
    q = np.sqrt((u / ry) ** 2 + (v / rx) ** 2)
    return _soft_step((1.0 - q) * min(ry, rx), feather)


def _grating_patch(yy, xx, rng, scale):
    """Sinusoidal grating confined to a soft elliptical window."""
    window = _ellipse_mask(yy, xx, rng, scale * 1.4)
    wavelength = rng.uniform(6.0, 20.0)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    k = 2 * np.pi / wavelength
    carrier = 0.5 + 0.5 * np.sin(k * (np.cos(theta) * yy + np.sin(theta) * xx) + phase)
    return window, carrier


def _line_mask(yy, xx, rng, scale):
    y0 = rng.uniform(0, yy.shape[0])
    x0 = rng.uniform(0, xx.shape[1])
    ang = rng.uniform(0, np.pi)
    half_len = rng.uniform(0.1, 0.45) * scale
    half_w = rng.uniform(0.7, 2.2)
    feather = rng.uniform(0.6, 1.2)
    u, v = _rot_coords(yy, xx, y0, x0, ang)
    along = _soft_step(half_len - np.abs(u), feather)
    across = _soft_step(half_w - np.abs(v), feather)
    return along * across


def synthesize_scene(seed: int, size: tuple[int, int] = (256, 256)) -> np.ndarray:
    """Render a deterministic synthetic scene.

    Parameters
    ----------
    seed:
        Seeds every random draw; equal seeds give bit-identical scenes.
    size:
        (H, W); both must be at least 8.

    Returns
    -------
    float32 array [H, W, 3] in [0, 1] on the 16-bit grid.
    """
    h, w = int(size[0]), int(size[1])
    if h < 8 or w < 8:
        raise DimensionError(f"scene size must be at least 8x8, got {h}x{w}")
    rng = np.random.default_rng(int(seed))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = min(h, w)
    area_factor = (h * w) / (_REF_EDGE * _REF_EDGE)

    # Smooth background: tilted ramp plus one broad sinusoid per channel.
    img = np.empty((h, w, 3), dtype=np.float64)
    gy, gx = rng.uniform(-1, 1, 2)
    ramp = (gy * yy / h + gx * xx / w)
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-9)
    for c in range(3):
        wl = rng.uniform(0.8, 2.5) * scale
        ph = rng.uniform(0, 2 * np.pi)
        ang = rng.uniform(0, np.pi)
        wave = np.sin(2 * np.pi * (np.cos(ang) * yy + np.sin(ang) * xx) / wl + ph)
        img[..., c] = 0.35 + 0.3 * ramp + 0.12 * wave

    def blend(mask, color, opacity):
        m = (mask * opacity)[..., None]
        np.copyto(img, img * (1.0 - m) + color[None, None, :] * m)

    n_rect = max(2, int(round(rng.integers(4, 9) * area_factor)))
    n_ell = max(2, int(round(rng.integers(4, 9) * area_factor)))
    n_grat = max(1, int(round(rng.integers(2, 5) * area_factor)))
    n_line = max(2, int(round(rng.integers(5, 11) * area_factor)))

    for _ in range(n_rect):
        blend(_rect_mask(yy, xx, rng, scale), rng.uniform(0.05, 0.95, 3), rng.uniform(0.7, 1.0))
    for _ in range(n_ell):
        blend(_ellipse_mask(yy, xx, rng, scale), rng.uniform(0.05, 0.95, 3), rng.uniform(0.7, 1.0))
    for _ in range(n_grat):
        window, carrier = _grating_patch(yy, xx, rng, scale)
        lo = rng.uniform(0.1, 0.4, 3)
        hi = rng.uniform(0.6, 0.9, 3)
        tex = lo[None, None, :] + (hi - lo)[None, None, :] * carrier[..., None]
        m = (window * rng.uniform(0.8, 1.0))[..., None]
        np.copyto(img, img * (1.0 - m) + tex * m)
    for _ in range(n_line):
        blend(_line_mask(yy, xx, rng, scale), rng.uniform(0.0, 1.0, 3), rng.uniform(0.8, 1.0))

    return quantize16(np.clip(img, 0.0, 1.0).astype(np.float32))
