"""Binary containers: clips and checkpoints share the ``SSHA`` magic.

Clip layout (little-endian)::

    b"SSHA" | u16 version=1 | u32 T | u32 H | u32 W | u32 C | u8 dtype | payload

``dtype`` is 0 for u8 and 1 for f32; the payload is row-major T->H->W->C.

Checkpoint layout::

    b"SSHA" | u16 version=2 | u32 header_len | header (UTF-8 JSON) | payload

The JSON header lists every tensor as ``{"name", "shape", "offset"}`` with
offsets in f32 elements into the payload, plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensorcore import VideoClip

MAGIC = b"SSHA"
CLIP_VERSION = 1
CHECKPOINT_VERSION = 2

_DTYPES = {0: np.dtype("u1"), 1: np.dtype("<f4")}
_CLIP_HEADER = struct.Struct("<4sHIIIIB")


class FormatError(ValueError):
    pass


def encode_clip(clip: VideoClip) -> bytes:
    f = clip.frames
    if f.dtype == np.uint8:
        tag = 0
    elif f.dtype == np.float32:
        tag = 1
    else:
        raise FormatError(f"unsupported clip dtype {f.dtype}")
    t, h, w, c = f.shape
    header = _CLIP_HEADER.pack(MAGIC, CLIP_VERSION, t, h, w, c, tag)
    return header + np.ascontiguousarray(f, dtype=_DTYPES[tag]).tobytes()


def decode_clip(data: bytes) -> VideoClip:
    if len(data) < _CLIP_HEADER.size:
        raise FormatError("truncated clip header")
    magic, version, t, h, w, c, tag = _CLIP_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise FormatError(f"unsupported clip version {version}")
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    dt = _DTYPES[tag]
    n = t * h * w * c
    payload = data[_CLIP_HEADER.size:]
    if len(payload) != n * dt.itemsize:
        raise FormatError(f"payload is {len(payload)} bytes, expected {n * dt.itemsize}")
    frames = np.frombuffer(payload, dtype=dt).reshape(t, h, w, c)
    if tag == 1:
        frames = frames.astype(np.float32)
    return VideoClip(frames.copy())


def write_clip(path, clip: VideoClip) -> None:
    Path(path).write_bytes(encode_clip(clip))


def read_clip(path) -> VideoClip:
    return decode_clip(Path(path).read_bytes())


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.tobytes())
    header = json.dumps({"tensors": entries, "meta": meta}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"not a checkpoint (container version {version})")
    header = json.loads(data[10:10 + hlen])
    payload = np.frombuffer(data[10 + hlen:], dtype="<f4")
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return tensors, header["meta"]
