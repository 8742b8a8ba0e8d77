import json

import numpy as np
import pytest

from smartmixed.checkpoint import MAGIC, load_checkpoint, parameter_checksum, read_header, save_checkpoint
from smartmixed.errors import CheckpointError
from smartmixed.grouped import freeze, grouped_forward
from smartmixed.network import NetworkPhase1, forward, init_network


def _net():
    net = init_network([12, 7, 5, 3], 2, tau=0.5)
    r = np.random.default_rng(0)
    for s in net.selections:
        s.logits[:] = r.normal(size=s.logits.shape)
    return net


def test_phase1_round_trip(tmp_path, rng):
    net = _net()
    digest = save_checkpoint(tmp_path / "a.ckpt", net, {"seed": 2})
    loaded, header = load_checkpoint(tmp_path / "a.ckpt")
    assert isinstance(loaded, NetworkPhase1)
    assert header["phase"] == "phase1" and header["config"] == {"seed": 2} and header["tau"] == 0.5
    assert digest == parameter_checksum(net) == parameter_checksum(loaded)
    X = rng.random((4, 12))
    assert np.array_equal(forward(net, X, noise_mode="zero")[0], forward(loaded, X, noise_mode="zero")[0])


def test_mixed_round_trip(tmp_path, rng):
    mixed = freeze(_net())
    save_checkpoint(tmp_path / "m.ckpt", mixed)
    loaded, header = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.assignment == mixed.assignment
    X = rng.random((4, 12))
    assert np.array_equal(grouped_forward(mixed, X)[0], grouped_forward(loaded, X)[0])


def test_header_is_readable_json(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", _net())
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw.startswith(MAGIC)
    n = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16:16 + n])
    assert [b["name"] for b in header["blocks"]][:2] == ["W0", "b0"]
    assert header["architecture"] == [12, 7, 5, 3]


@pytest.mark.parametrize("damage", ["truncate", "flip", "magic", "short"])
def test_corruption_detected(tmp_path, damage):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, _net())
    raw = bytearray(path.read_bytes())
    if damage == "truncate":
        raw = raw[:-1]
    elif damage == "flip":
        raw[-3] ^= 0xFF
    elif damage == "magic":
        raw[0:4] = b"XXXX"
    else:
        raw = raw[:12]
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        read_header(tmp_path / "nope.ckpt")
