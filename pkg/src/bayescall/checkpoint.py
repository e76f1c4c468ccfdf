"""BVC1 checkpoint files: model spec plus all parameter arrays, bit-exact.

Layout: 4-byte magic "BVC1", version u32 LE, header length u32 LE, a UTF-8
JSON header (the model spec and a named-array directory with shapes and
byte offsets into the data section), then the arrays as raw little-endian
64-bit floats in directory order.  The JSON is canonical (sorted keys, no
whitespace) so identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .network import Model, ModelSpec

__all__ = ["CHECKPOINT_MAGIC", "CHECKPOINT_VERSION",
           "save_checkpoint", "load_checkpoint"]

CHECKPOINT_MAGIC = b"BVC1"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sII")  # magic, version, header length


def save_checkpoint(model: Model, path) -> None:
    names = sorted(model.params)
    directory = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"spec": model.spec.to_dict(), "arrays": directory},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _PREFIX.size:
        raise FormatError(
            f"file too short for a {_PREFIX.size}-byte prefix", offset=len(blob))
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}",
                          offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    header_end = _PREFIX.size + header_len
    if len(blob) < header_end:
        raise FormatError("truncated JSON header", offset=len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable JSON header: {exc}",
                          offset=_PREFIX.size) from None
    try:
        spec = ModelSpec.from_dict(header["spec"])
        directory = header["arrays"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed header: {exc}", offset=_PREFIX.size) from None

    params: dict[str, np.ndarray] = {}
    for entry in directory:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        start = header_end + offset
        end = start + 8 * count
        if end > len(blob):
            raise FormatError(
                f"array {name!r} runs past end of file", offset=len(blob))
        params[name] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    data_end = header_end + sum(
        8 * int(np.prod(e["shape"])) for e in directory)
    if len(blob) != data_end:
        raise FormatError(
            f"expected {data_end} bytes total, got {len(blob)}", offset=data_end)
    return Model(spec, params)
