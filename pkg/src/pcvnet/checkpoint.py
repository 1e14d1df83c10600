"""Single-file checkpoint archive.

Layout: 8-byte magic, little-endian uint64 header length, canonical-JSON
header, then the raw parameter payload. The header carries the model config
plus a name -> (shape, byte offset) index; every array is little-endian
float32 in C order. Saving the result of a load reproduces the input
byte-for-byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import BadMagicError, DataError, TruncatedPayloadError

CKPT_MAGIC = b"PCVCKPT1"


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4", order="C")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    header = _canonical_json({"config": config, "index": index, "payload_bytes": offset})
    return CKPT_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def deserialize_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != CKPT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {data[:8]!r}")
    if len(data) < 16:
        raise TruncatedPayloadError("truncated checkpoint header")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + header_len
    if len(data) < header_end:
        raise TruncatedPayloadError("truncated checkpoint header")
    header = json.loads(data[16:header_end].decode("utf-8"))
    payload = data[header_end:]
    if len(payload) != header["payload_bytes"]:
        raise TruncatedPayloadError(
            f"truncated checkpoint payload: expected {header['payload_bytes']}, "
            f"got {len(payload)} bytes"
        )
    arrays = {}
    for name, entry in header["index"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        arrays[name] = arr.reshape(shape).copy()
    return header["config"], arrays


def save_checkpoint(path: str | Path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(serialize_checkpoint(config, arrays))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing checkpoint: {p}")
    return deserialize_checkpoint(p.read_bytes())


def state_dict_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a module state dict (parameters and buffers) to float32 arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().to(torch.float32).numpy()
    return out


def load_arrays_into_module(
    module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str = ""
) -> None:
    """Copy archive arrays back into a module, casting to each entry's dtype.

    Raises if the archive is missing any entry under the prefix.
    """
    state = module.state_dict()
    new_state = {}
    for name, tensor in state.items():
        key = prefix + name
        if key not in arrays:
            raise DataError(f"checkpoint missing parameter group entry {key!r}")
        value = torch.from_numpy(np.ascontiguousarray(arrays[key]))
        new_state[name] = value.reshape(tensor.shape).to(tensor.dtype)
    module.load_state_dict(new_state)


def has_prefix(arrays: dict[str, np.ndarray], prefix: str) -> bool:
    return any(k.startswith(prefix) for k in arrays)
