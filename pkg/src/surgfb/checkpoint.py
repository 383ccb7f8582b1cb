"""Self-describing, byte-deterministic checkpoint container.

Layout: 4-byte magic, 8-byte little-endian header length, UTF-8 JSON header
(format tag, config, tensor manifest, extra metadata), then raw little-endian
tensor bytes in manifest order. Identical inputs always produce identical
bytes, which the frozen-encoder and round-trip contracts rely on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SFBK"
FORMAT_TAG = "surgfb-checkpoint-v1"

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def checkpoint_bytes(
    tensors: dict[str, torch.Tensor],
    config: dict | None = None,
    extra: dict | None = None,
) -> bytes:
    manifest = []
    blobs = []
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype} for '{name}'")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps(
        {
            "format": FORMAT_TAG,
            "config": config or {},
            "tensors": manifest,
            "extra": extra or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header, *blobs])


def save_checkpoint(
    path: str | Path,
    tensors: dict[str, torch.Tensor],
    config: dict | None = None,
    extra: dict | None = None,
) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(checkpoint_bytes(tensors, config, extra))


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    offset = 12 + header_len
    tensors: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    return tensors, header["config"], header["extra"]


def module_state_bytes(module: torch.nn.Module) -> bytes:
    """Serialized parameters and buffers, for frozen-contract digests."""
    state = {k: v for k, v in module.state_dict().items()}
    return checkpoint_bytes(state)


def save_module(path: str | Path, module: torch.nn.Module, config: dict | None = None, extra: dict | None = None) -> None:
    save_checkpoint(path, dict(module.state_dict()), config, extra)


def load_module_state(path: str | Path, module: torch.nn.Module) -> tuple[dict, dict]:
    tensors, config, extra = load_checkpoint(path)
    module.load_state_dict(tensors)
    return config, extra
