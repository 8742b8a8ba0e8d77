"""Self-describing checkpoint files.

Layout::

    8 bytes   magic b"SMXCKPT\\n"
    8 bytes   header length, little-endian uint64
    N bytes   UTF-8 JSON header
    rest      float64 little-endian parameter blocks, in header order

The header records the architecture, phase, activation assignment (mixed
networks), a config echo, block shapes and a SHA-256 of the payload.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from smartmixed.activations import ActivationParams
from smartmixed.errors import CheckpointError
from smartmixed.grouped import ActivationAssignment, NetworkMixed
from smartmixed.gumbel import SelectionState
from smartmixed.network import DenseLayer, LayeredNetwork, NetworkPhase1

MAGIC = b"SMXCKPT\n"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _blocks(net: LayeredNetwork) -> list[tuple[str, np.ndarray]]:
    out = []
    for l, layer in enumerate(net.layers):
        out += [(f"W{l}", layer.W), (f"b{l}", layer.b)]
    if isinstance(net, NetworkPhase1):
        out += [(f"logits{l}", s.logits) for l, s in enumerate(net.selections)]
    return out


def payload_bytes(net: LayeredNetwork) -> bytes:
    return b"".join(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes() for _, arr in _blocks(net))


def parameter_checksum(net: LayeredNetwork) -> str:
    """SHA-256 over all parameter blocks in checkpoint order."""
    return hashlib.sha256(payload_bytes(net)).hexdigest()


def save_checkpoint(path, net: LayeredNetwork, config: dict | None = None) -> str:
    """Write ``net`` to ``path``; returns the payload checksum."""
    payload = payload_bytes(net)
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "format": "smartmixed-checkpoint",
        "version": FORMAT_VERSION,
        "phase": "phase1" if isinstance(net, NetworkPhase1) else "mixed",
        "architecture": net.architecture,
        "activation_params": dataclasses.asdict(net.params),
        "blocks": [{"name": name, "shape": list(arr.shape)} for name, arr in _blocks(net)],
        "payload_bytes": len(payload),
        "payload_sha256": digest,
        "config": config or {},
    }
    if isinstance(net, NetworkPhase1):
        header["tau"] = net.tau
        header["eps"] = net.selections[0].eps if net.selections else 1e-20
    else:
        header["assignment"] = net.assignment.to_names()
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(raw)) + raw + payload)
    return digest


def read_header(path) -> tuple[dict, bytes]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a smartmixed checkpoint")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + n:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = data[16 + n:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    return header, payload


def load_checkpoint(path) -> tuple[LayeredNetwork, dict]:
    header, payload = read_header(path)
    arrays = {}
    offset = 0
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=offset)
        arrays[block["name"]] = arr.astype(np.float64).reshape(shape)
        offset += 8 * count
    try:
        arch = header["architecture"]
        params = ActivationParams(**header["activation_params"])
        layers = [DenseLayer(arrays[f"W{l}"], arrays[f"b{l}"]) for l in range(len(arch) - 1)]
        if header["phase"] == "phase1":
            sels = [
                SelectionState(arrays[f"logits{l}"], header["tau"], header["eps"])
                for l in range(len(arch) - 2)
            ]
            net = NetworkPhase1(arch, layers, sels, params)
        else:
            net = NetworkMixed(arch, layers, ActivationAssignment.from_names(header["assignment"]), params)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {exc}") from exc
    return net, header
