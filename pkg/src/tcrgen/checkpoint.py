"""Self-describing binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"TCRC"
    version u32      currently 1
    hlen    u64      byte length of the JSON header
    header  hlen bytes, UTF-8 JSON with sorted keys:
                config            ModelConfig fields
                vocab             the 26 symbols in id order
                descriptor_sha256 checksum of the descriptor data file
                tensors           parameter names in storage order
                optimizer         null, or {"step": int, "tensors": [...]}
    then, for each name in ``tensors`` (and afterwards, if optimizer state
    is present, for each optimizer tensor in its listed order):
    name_len u32, name UTF-8, ndim u32, ndim x u64 dims,
    then the raw C-order float64 little-endian payload.

Writers emit keys in sorted order with fixed separators, so identical
inputs produce byte-identical files.
"""

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig

MAGIC = b"TCRC"
VERSION = 1


def _write_tensor(f, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f8")
    enc = name.encode("utf-8")
    f.write(struct.pack("<I", len(enc)))
    f.write(enc)
    f.write(struct.pack("<I", data.ndim))
    for dim in data.shape:
        f.write(struct.pack("<Q", dim))
    f.write(data.tobytes())


def _read_tensor(f):
    raw = f.read(4)
    if len(raw) < 4:
        raise CheckpointError("truncated tensor record")
    (name_len,) = struct.unpack("<I", raw)
    name = f.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(path, cfg: ModelConfig, params: dict, vocab_symbols,
                    descriptor_sha256: str, optimizer_state: dict | None = None):
    """``optimizer_state`` is {"step": int, "m": {name: arr}, "v": {...}}."""
    names = sorted(params)
    opt_header = None
    opt_tensors = []
    if optimizer_state is not None:
        for kind in ("m", "v"):
            for name in names:
                opt_tensors.append((f"{kind}:{name}", optimizer_state[kind][name]))
        opt_header = {"step": int(optimizer_state["step"]),
                      "tensors": [n for n, _ in opt_tensors]}
    header = {
        "config": cfg.to_dict(),
        "vocab": list(vocab_symbols),
        "descriptor_sha256": descriptor_sha256,
        "tensors": names,
        "optimizer": opt_header,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            _write_tensor(f, name, params[name])
        for name, arr in opt_tensors:
            _write_tensor(f, name, arr)


def load_checkpoint(path):
    """Returns (cfg, params, header, optimizer_state-or-None)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        params = {}
        for expected in header["tensors"]:
            name, arr = _read_tensor(f)
            if name != expected:
                raise CheckpointError(f"tensor order mismatch: {name} != {expected}")
            params[name] = arr
        opt = None
        if header.get("optimizer"):
            m, v = {}, {}
            for expected in header["optimizer"]["tensors"]:
                name, arr = _read_tensor(f)
                if name != expected:
                    raise CheckpointError(f"optimizer tensor mismatch: {name}")
                kind, pname = name.split(":", 1)
                (m if kind == "m" else v)[pname] = arr
            opt = {"step": header["optimizer"]["step"], "m": m, "v": v}
    cfg = ModelConfig.from_dict(header["config"])
    return cfg, params, header, opt
