import struct

import numpy as np
import pytest

from deepangio.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from deepangio.nets import build_decoder, build_encoder, decoder_config, encoder_config


@pytest.fixture
def nets():
    return {
        "encoder": build_encoder(encoder_config(base_channels=4, depth=2), seed=0),
        "decoder": build_decoder(decoder_config(base_channels=4, depth=1), seed=1),
    }


def test_roundtrip_is_bit_exact(tmp_path, nets):
    arrays = {"adam.m/encoder/x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    save_checkpoint(tmp_path / "a.dang", nets, epoch=7, state={"kind": "vae", "log": [[1, 0, 0.1]]}, arrays=arrays)
    ck = load_checkpoint(tmp_path / "a.dang")
    assert ck.epoch == 7 and ck.state["kind"] == "vae"
    for name, net in nets.items():
        assert ck.nets[name].config == net.config and ck.nets[name].role == net.role
        for k, p in net.params.items():
            got = ck.nets[name].params[k].data
            assert got.dtype == np.float32
            assert got.tobytes() == p.data.tobytes()
    np.testing.assert_array_equal(ck.arrays["adam.m/encoder/x"], arrays["adam.m/encoder/x"])


def test_rewrite_of_loaded_checkpoint_is_byte_identical(tmp_path, nets):
    save_checkpoint(tmp_path / "a.dang", nets, epoch=1)
    ck = load_checkpoint(tmp_path / "a.dang")
    save_checkpoint(tmp_path / "b.dang", ck.nets, epoch=ck.epoch, state=ck.state)
    assert (tmp_path / "a.dang").read_bytes() == (tmp_path / "b.dang").read_bytes()


def test_header_layout(tmp_path, nets):
    save_checkpoint(tmp_path / "a.dang", nets)
    raw = (tmp_path / "a.dang").read_bytes()
    magic, version, hlen = struct.unpack_from("<4sIQ", raw)
    assert magic == MAGIC == b"DANG" and version == 1
    n_floats = sum(p.size for net in nets.values() for p in net.params.values())
    assert len(raw) == 16 + hlen + 4 * n_floats


@pytest.mark.parametrize("mutate,match", [
    (lambda raw: raw[:10], "too short"),
    (lambda raw: b"XXXX" + raw[4:], "magic"),
    (lambda raw: raw[:4] + struct.pack("<I", 99) + raw[8:], "version"),
    (lambda raw: raw[:-4], "truncated payload"),
    (lambda raw: raw + b"\0\0\0\0", "trailing"),
])
def test_corrupt_files_rejected(tmp_path, nets, mutate, match):
    save_checkpoint(tmp_path / "a.dang", nets)
    bad = tmp_path / "bad.dang"
    bad.write_bytes(mutate((tmp_path / "a.dang").read_bytes()))
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(bad)


def test_no_temp_file_left(tmp_path, nets):
    save_checkpoint(tmp_path / "a.dang", nets)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.dang"]
