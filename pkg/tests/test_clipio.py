import struct

import numpy as np
import pytest

from ssha.clipio import (FormatError, decode_clip, encode_clip, read_checkpoint, read_clip,
                         write_checkpoint, write_clip)
from ssha.tensorcore import VideoClip


def test_header_layout():
    f = np.arange(2 * 3 * 4 * 3, dtype=np.uint8).reshape(2, 3, 4, 3)
    data = encode_clip(VideoClip(f))
    assert data[:4] == b"SSHA"
    assert struct.unpack_from("<H", data, 4) == (1,)
    assert struct.unpack_from("<IIII", data, 6) == (2, 3, 4, 3)
    assert data[22] == 0
    assert data[23:] == f.tobytes()


@pytest.mark.parametrize("dtype", [np.uint8, np.float32])
def test_roundtrip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    f = (rng.integers(0, 256, (3, 5, 6, 2)) if dtype == np.uint8 else rng.normal(size=(3, 5, 6, 2))).astype(dtype)
    write_clip(tmp_path / "c.ssha", VideoClip(f))
    back = read_clip(tmp_path / "c.ssha").frames
    assert back.dtype == dtype
    assert np.array_equal(back, f)


def test_rejects_garbage():
    with pytest.raises(FormatError):
        decode_clip(b"XXXX" + bytes(30))
    good = encode_clip(VideoClip(np.zeros((1, 2, 2, 3), np.uint8)))
    with pytest.raises(FormatError):
        decode_clip(good[:-1])
    with pytest.raises(FormatError):
        decode_clip(good[:10])


def test_checkpoint_roundtrip(tmp_path):
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, np.float32)}
    write_checkpoint(tmp_path / "x.ssha", t, {"k": [1, 2]})
    back, meta = read_checkpoint(tmp_path / "x.ssha")
    assert meta == {"k": [1, 2]}
    assert set(back) == {"a", "b"}
    assert np.array_equal(back["a"], t["a"])


def test_clip_is_not_a_checkpoint(tmp_path):
    write_clip(tmp_path / "c.ssha", VideoClip(np.zeros((1, 2, 2, 3), np.uint8)))
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "c.ssha")
