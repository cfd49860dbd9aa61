"""Single-file checkpoint container: JSON header plus raw tensor blobs.

Layout (all integers little-endian):

    bytes 0..7    magic b"CYCSRCK\\x00"
    bytes 8..11   format version (uint32), currently 1
    bytes 12..19  header length L (uint64)
    bytes 20..    UTF-8 JSON header of L bytes
    then          concatenated raw tensor data

The header is ``{"format_version": 1, "meta": {...}, "tensors": [...]}``
where each tensor entry records name, shape, dtype and byte offset/length
into the data section. Tensors are stored little-endian in C order, sorted
by name, so the byte stream is reproducible and readable from any language
with a JSON parser.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CYCSRCK\x00"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
    "uint8": "|u1",
}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, meta: dict, tensors: dict):
    """Write a checkpoint file. ``tensors`` maps name -> numpy array."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        # note: ascontiguousarray would promote 0-dim scalars to shape (1,);
        # astype below already yields a fresh C-ordered copy
        arr = np.asarray(tensors[name])
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {dtype_name}")
        blob = arr.astype(_DTYPES[dtype_name]).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype_name,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "meta": meta, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Read a checkpoint file, returning (meta, {name: array})."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        data = f.read()
    tensors = {}
    for entry in header["tensors"]:
        raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(entry["dtype"])
    return header["meta"], tensors


def module_tensors(module, prefix: str) -> dict:
    """All state tensors of a torch module (params and buffers) as numpy."""
    out = {}
    for key, value in module.state_dict().items():
        out[f"{prefix}.{key}"] = value.detach().cpu().numpy()
    return out


def load_module_tensors(module, prefix: str, tensors: dict):
    """Restore a torch module from checkpoint tensors with the given prefix."""
    import torch

    state = {}
    plen = len(prefix) + 1
    for name, arr in tensors.items():
        if name.startswith(prefix + "."):
            state[name[plen:]] = torch.from_numpy(arr.copy())
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors for {prefix}: {sorted(missing)[:5]}")
    module.load_state_dict(state)
