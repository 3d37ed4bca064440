"""Deterministic checkpoint serialization.

Format: magic b"DZCK", uint32 version, uint32 header length, then a JSON
header (sorted keys) holding kind, config fingerprint, the full config
text, and per-tensor manifests (name, dtype, shape, byte offset), followed
by the raw little-endian tensor payload.  Byte output depends only on the
content, so identical training runs produce identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"DZCK"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


@dataclasses.dataclass
class Checkpoint:
    kind: str                       # "degradation" | "zooming"
    state: dict[str, torch.Tensor]
    config_fingerprint: str
    config_text: str
    format_version: int = FORMAT_VERSION
    extra: dict | None = None       # small string metadata (e.g. align_mode)


def param_hash(state: dict[str, torch.Tensor]) -> str:
    """Content hash of a parameter set, independent of file layout."""
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.state):
        t = ckpt.state[name].detach().cpu().contiguous()
        dtype = str(t.numpy().dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name}")
        raw = t.numpy().astype(_DTYPES[dtype]).tobytes()
        tensors.append({"name": name, "dtype": dtype,
                        "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "kind": ckpt.kind,
        "fingerprint": ckpt.config_fingerprint,
        "config": ckpt.config_text,
        "format_version": ckpt.format_version,
        "extra": ckpt.extra or {},
        "tensors": tensors,
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str, expect_kind: str | None = None,
                    expect_fingerprint: str | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
            version, hlen = struct.unpack("<II", f.read(8))
            if version != FORMAT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            header = json.loads(f.read(hlen).decode())
            payload = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(
            f"checkpoint kind {header['kind']!r} != expected {expect_kind!r}")
    if expect_fingerprint is not None and header["fingerprint"] != expect_fingerprint:
        raise CheckpointError(
            f"checkpoint fingerprint {header['fingerprint']} does not match the "
            f"current architecture config {expect_fingerprint}")

    state = {}
    for spec in header["tensors"]:
        raw = payload[spec["offset"]:spec["offset"] + spec["nbytes"]]
        if len(raw) != spec["nbytes"]:
            raise CheckpointError(f"{path} is truncated at tensor {spec['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[spec["dtype"]]).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.astype(spec["dtype"])).clone()
    return Checkpoint(kind=header["kind"], state=state,
                      config_fingerprint=header["fingerprint"],
                      config_text=header["config"],
                      format_version=header["format_version"],
                      extra=header.get("extra", {}))
