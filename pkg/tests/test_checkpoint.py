import json
import os
import struct

import numpy as np
import pytest

from ramit.checkpoint import (
    MAGIC,
    CheckpointIoError,
    CheckpointShapeMismatch,
    UnknownParameter,
    encode_checkpoint,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from ramit.model import ModelConfig, build_model
from ramit.tensor import Tensor, no_grad

CFG = ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task="sr")


def test_round_trip_is_bit_exact(tmp_path):
    model = build_model(CFG, 7)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path, {"step": 3})
    loaded, meta = load_checkpoint(path)
    assert meta == {"step": 3}
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        assert p1.data.tobytes() == p2.data.tobytes()
    x = Tensor(np.random.default_rng(0).random((3, 16, 16), dtype=np.float32))
    with no_grad():
        assert model(x).data.tobytes() == loaded(x).data.tobytes()
    # re-encoding the loaded model reproduces the file
    with open(path, "rb") as f:
        assert f.read() == encode_checkpoint(loaded, {"step": 3})


def test_layout(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(build_model(CFG, 0), path)
    raw = open(path, "rb").read()
    assert raw[:8] == MAGIC
    version, mlen = struct.unpack(">IQ", raw[8:20])
    manifest = json.loads(raw[20:20 + mlen])
    assert version == 1 and manifest["format_version"] == 1
    last = manifest["params"][-1]
    assert len(raw) - 20 - mlen == last["offset"] + 4 * int(np.prod(last["shape"]))


def test_truncated_blob_names_first_incomplete_record(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(build_model(CFG, 0), path)
    raw = open(path, "rb").read()
    manifest, _ = read_checkpoint(path)
    mlen = struct.unpack(">Q", raw[12:20])[0]
    third = manifest["params"][2]
    cut = 20 + mlen + third["offset"] + 2
    with open(path, "wb") as f:
        f.write(raw[:cut])
    with pytest.raises(CheckpointIoError, match=third["name"].replace(".", r"\.")):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(CheckpointIoError):
        read_checkpoint(str(path))


def test_shape_mismatch_lists_names(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(build_model(ModelConfig(dim=64), None), path)
    with pytest.raises(CheckpointShapeMismatch) as err:
        load_checkpoint(path, ModelConfig(dim=48))
    assert "shallow.conv.weight" in err.value.names
    assert "shallow.conv.weight" in str(err.value)


def test_unknown_parameter(tmp_path):
    small = ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task="color_dn")
    big = ModelConfig(dim=8, depths=[2, 1, 1, 1], window=4, task="color_dn")
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(build_model(big, 0), path)
    with pytest.raises(UnknownParameter):
        load_checkpoint(path, small)


def test_atomic_write_leaves_no_temp(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(build_model(CFG, 0), path)
    save_checkpoint(build_model(CFG, 1), path)
    assert os.listdir(tmp_path) == ["m.ckpt"]
