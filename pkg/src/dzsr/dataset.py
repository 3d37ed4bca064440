"""On-disk dataset layout.

Each sample lives in its own subdirectory::

    <root>/<sample_id>/
        short.png    # 16-bit PNG, the low-resolution frame
        tele.png     # 16-bit PNG, the ground-truth frame
        warp.bin     # displacement field, see header below
        meta.txt     # key=value lines (seed, ratio, sigma, quality, order, ...)
        lr_clean.png # 16-bit PNG, noise-free LR (extra; used by oracles)

warp.bin is an 8-byte header (magic b"DZWP", uint16 H, uint16 W,
little-endian) followed by H*W*2 little-endian float32 values in C order,
ordered (dy, dx) per pixel.

Because generated images are snapped to the 16-bit grid, write followed by
read reproduces every array bit-exactly.
"""

from __future__ import annotations

import os
import struct

import cv2
import numpy as np

from .data import DualZoomSample, NoiseSpec, make_dualzoom_pair, u16_to_unit, unit_to_u16
from .errors import DataError
from .scenes import synthesize_scene

WARP_MAGIC = b"DZWP"


def write_png16(path: str, img: np.ndarray) -> None:
    """Write a float [0,1] RGB image as 16-bit PNG."""
    u16 = unit_to_u16(img)
    if not cv2.imwrite(path, u16[..., ::-1]):
        raise DataError(f"failed to write {path}")


def read_png16(path: str) -> np.ndarray:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"failed to read {path}")
    if raw.dtype != np.uint16:
        raise DataError(f"{path} is not a 16-bit PNG (dtype {raw.dtype})")
    return u16_to_unit(np.ascontiguousarray(raw[..., ::-1]))


def write_warp(path: str, field: np.ndarray) -> None:
    h, w = field.shape[:2]
    if h > 0xFFFF or w > 0xFFFF:
        raise DataError(f"warp field too large for header: {h}x{w}")
    with open(path, "wb") as f:
        f.write(WARP_MAGIC)
        f.write(struct.pack("<HH", h, w))
        f.write(field.astype("<f4").tobytes(order="C"))


def read_warp(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8 or head[:4] != WARP_MAGIC:
            raise DataError(f"{path} has a bad warp header")
        h, w = struct.unpack("<HH", head[4:])
        buf = f.read(h * w * 2 * 4)
    if len(buf) != h * w * 2 * 4:
        raise DataError(f"{path} is truncated")
    return np.frombuffer(buf, dtype="<f4").reshape(h, w, 2).copy()


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_meta(path: str, meta: dict) -> None:
    with open(path, "w") as f:
        for k in sorted(meta):
            f.write(f"{k}={_format_value(meta[k])}\n")


def read_meta(path: str) -> dict:
    meta = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or "=" not in line:
                continue
            k, v = line.split("=", 1)
            meta[k] = v
    return meta


def _meta_num(meta: dict, key: str, cast):
    try:
        return cast(meta[key])
    except (KeyError, ValueError) as e:
        raise DataError(f"meta is missing or has a bad {key!r}: {e}") from e


def write_sample(root: str, sample_id: str, sample: DualZoomSample) -> str:
    d = os.path.join(root, sample_id)
    os.makedirs(d, exist_ok=True)
    write_png16(os.path.join(d, "short.png"), sample.short_focus)
    write_png16(os.path.join(d, "tele.png"), sample.telephoto)
    write_warp(os.path.join(d, "warp.bin"), sample.true_warp)
    write_meta(os.path.join(d, "meta.txt"), sample.degradation_meta)
    if sample.lr_clean is not None:
        write_png16(os.path.join(d, "lr_clean.png"), sample.lr_clean)
    return d


def read_sample(sample_dir: str) -> DualZoomSample:
    meta = read_meta(os.path.join(sample_dir, "meta.txt"))
    short = read_png16(os.path.join(sample_dir, "short.png"))
    tele = read_png16(os.path.join(sample_dir, "tele.png"))
    warp = read_warp(os.path.join(sample_dir, "warp.bin"))
    clean_path = os.path.join(sample_dir, "lr_clean.png")
    lr_clean = read_png16(clean_path) if os.path.exists(clean_path) else None
    residual = short - lr_clean if lr_clean is not None else None
    return DualZoomSample(
        short_focus=short, telephoto=tele,
        ratio=_meta_num(meta, "ratio", int),
        true_warp=warp,
        gen_seed=_meta_num(meta, "seed", int),
        degradation_meta=meta, lr_clean=lr_clean, residual=residual,
    ).validate()


def list_sample_dirs(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise DataError(f"dataset directory {root!r} does not exist")
    dirs = sorted(
        os.path.join(root, name) for name in os.listdir(root)
        if os.path.isfile(os.path.join(root, name, "meta.txt"))
    )
    if not dirs:
        raise DataError(f"dataset directory {root!r} contains no samples")
    return dirs


def read_dataset(root: str) -> list[DualZoomSample]:
    return [read_sample(d) for d in list_sample_dirs(root)]


def generate_dataset(root: str, scenes: int, ratio: int, warp_bound: float,
                     seed: int, size: tuple[int, int] = (128, 128),
                     noise: NoiseSpec | None = None,
                     blur_sigma_range: tuple[float, float] = (0.8, 2.4)) -> list[str]:
    """Synthesize and write `scenes` samples; returns the sample dirs."""
    if noise is None:
        noise = NoiseSpec()
    os.makedirs(root, exist_ok=True)
    dirs = []
    for i in range(scenes):
        scene_seed = int(seed) + i
        hr = synthesize_scene(scene_seed, size)
        sample = make_dualzoom_pair(hr, ratio, warp_bound, noise, scene_seed,
                                    blur_sigma_range=blur_sigma_range)
        sample.degradation_meta["scene_h"] = size[0]
        sample.degradation_meta["scene_w"] = size[1]
        dirs.append(write_sample(root, f"{i:04d}", sample))
    return dirs
