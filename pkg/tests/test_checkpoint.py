import struct

import numpy as np
import pytest

from vfusion.checkpoint import CheckpointError, load_checkpoint, read_entries, save_checkpoint
from vfusion.model import ModelConfig, build_model
from vfusion.train import OptimizerState

SMALL = ModelConfig(width_factor=0.125, sequence_length=3, crop_size=32)


def parse_by_hand(buf):
    """Minimal independent reader for the documented layout."""
    assert buf[:5] == b"VDCP1"
    pos = 5
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<Q", buf, pos)
        name = buf[pos + 8:pos + 8 + n].decode()
        pos += 8 + n
        (rank,) = struct.unpack_from("<Q", buf, pos)
        dims = struct.unpack_from(f"<{rank}Q", buf, pos + 8)
        pos += 8 + 8 * rank
        size = int(np.prod(dims))
        out[name] = np.frombuffer(buf, "<f4", size, pos).reshape(dims)
        pos += 4 * size
    assert pos == len(buf)
    return out


def test_round_trip_bitwise(tmp_path):
    params = build_model(SMALL, 4)
    opt = OptimizerState.for_params(params)
    for v in opt.v.values():
        v[...] = np.random.default_rng(0).random(v.shape)
    path = tmp_path / "m.vdcp"
    save_checkpoint(path, params, opt)
    loaded, v = load_checkpoint(path, build_model(SMALL, 99))
    assert list(loaded) == list(params)
    for name in params:
        assert loaded[name].data.tobytes() == params[name].data.tobytes()
        assert v[name].astype(np.float32).tobytes() == opt.v[name].astype(np.float32).tobytes()


def test_file_layout_is_self_describing(tmp_path):
    params = build_model(SMALL, 4)
    path = tmp_path / "m.vdcp"
    save_checkpoint(path, params)
    by_hand = parse_by_hand(path.read_bytes())
    assert list(by_hand) == list(params)
    for name, arr in by_hand.items():
        assert arr.tobytes() == params[name].data.astype("<f4").tobytes()
    assert load_checkpoint(path, params)[1] is None


def test_truncated_file_names_entry(tmp_path):
    params = build_model(SMALL, 4)
    path = tmp_path / "m.vdcp"
    save_checkpoint(path, params)
    buf = path.read_bytes()
    path.write_bytes(buf[:len(buf) - 4])
    last = list(params)[-1]
    with pytest.raises(CheckpointError, match=f"truncated data for entry '{last}'"):
        read_entries(path)
    path.write_bytes(buf[:3])
    with pytest.raises(CheckpointError, match="bad header"):
        read_entries(path)
    path.write_bytes(buf + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_entries(path)


def test_cross_width_load_rejected(tmp_path):
    path = tmp_path / "half.vdcp"
    save_checkpoint(path, build_model(ModelConfig(width_factor=0.5)))
    with pytest.raises(CheckpointError, match="'alexnet.conv1.weight' has shape"):
        load_checkpoint(path, build_model(ModelConfig(width_factor=1.0)))


def test_missing_and_unexpected_entries(tmp_path):
    params = build_model(SMALL)
    path = tmp_path / "m.vdcp"
    save_checkpoint(path, params)
    trimmed = build_model(SMALL)
    del trimmed.tensors["head.fc2.bias"]
    with pytest.raises(CheckpointError, match="unexpected entry 'head.fc2.bias'"):
        load_checkpoint(path, trimmed)
    save_checkpoint(path, trimmed)
    with pytest.raises(CheckpointError, match="missing entry 'head.fc2.bias'"):
        load_checkpoint(path, params)


def test_save_leaves_no_temp_file(tmp_path):
    save_checkpoint(tmp_path / "m.vdcp", build_model(SMALL))
    assert [p.name for p in tmp_path.iterdir()] == ["m.vdcp"]
