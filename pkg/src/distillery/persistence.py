"""Versioned binary formats for checkpoints and replay buffers.

Both formats are little-endian and written atomically (temp file + rename),
so identical inputs always produce byte-identical files.

Checkpoint (magic ``ADCK``, version 1):
  magic[4] | version u32 | json_len u32 | JSON {topology, provenance} |
  parameters as f32 in (body 0 weights row-major, body 0 biases, ...,
  policy head, value head) order | crc32 u32 of all preceding bytes.

Replay buffer (magic ``ADRB``, version 1):
  magic[4] | version u32 | obs_dim u32 | action_count u32 |
  record_count u64 | global_seed u64 |
  records (obs_dim f32, action_count f32, action u16 each) |
  meta_len u32 | UTF-8 JSON metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .distill import ReplayBuffer
from .envs import EnvSpec
from .errors import ConfigError, FormatError, NumericError
from .nets import ActorCriticNet, DenseLayer, parameter_count

CHECKPOINT_MAGIC = b"ADCK"
REPLAY_MAGIC = b"ADRB"
FORMAT_VERSION = 1


def atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except OSError as err:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise FormatError(f"cannot write {path}: {err}") from err


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _flat_parameters_f32(net: ActorCriticNet) -> np.ndarray:
    parts = [p.astype("<f4").ravel() for p in net.parameters()]
    return np.concatenate(parts)


def policy_digest(net: ActorCriticNet) -> str:
    """Content-addressed id: short hash of the f32 parameter payload."""
    import hashlib

    return hashlib.sha256(_flat_parameters_f32(net).tobytes()).hexdigest()[:12]


def save_checkpoint(net: ActorCriticNet, provenance: dict, path: str) -> None:
    """Serialize the network plus its provenance record."""
    flat = _flat_parameters_f32(net)
    if not np.all(np.isfinite(flat)):
        raise NumericError("refusing to save a network with non-finite parameters")
    topology = {
        "obs_dim": net.obs_dim,
        "action_count": net.action_count,
        "hidden_widths": list(net.hidden_widths),
        "activations": [layer.activation for layer in net.body],
    }
    blob = _canonical_json({"topology": topology, "provenance": provenance})
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<I", FORMAT_VERSION)
    payload += struct.pack("<I", len(blob))
    payload += blob
    payload += flat.tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    atomic_write(path, bytes(payload))


def _read_file(path: str) -> bytes:
    try:
        with open(path, "rb") as handle:
            return handle.read()
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err


def load_checkpoint(path: str):
    """Reconstruct (net, provenance) from a checkpoint file.

    Parameters come back exactly as stored (f32 quantization applied at
    save time); any corruption fails the trailing CRC32 check.
    """
    data = _read_file(path)
    if len(data) < 16:
        raise FormatError(f"{path}: too short to be a checkpoint")
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{path}: checksum failure")
    (json_len,) = struct.unpack_from("<I", data, 8)
    blob_end = 12 + json_len
    if blob_end > len(data) - 4:
        raise FormatError(f"{path}: truncated header")
    try:
        doc = json.loads(data[12:blob_end].decode("utf-8"))
        topology = doc["topology"]
        provenance = doc["provenance"]
        obs_dim = int(topology["obs_dim"])
        action_count = int(topology["action_count"])
        widths = [int(w) for w in topology["hidden_widths"]]
        activations = list(topology["activations"])
    except (ValueError, KeyError, TypeError) as err:
        raise FormatError(f"{path}: malformed header JSON: {err}") from err
    if len(activations) != len(widths):
        raise FormatError(f"{path}: activation tags do not match hidden widths")

    expected = _shape_plan(obs_dim, action_count, widths)
    n_params = sum(int(np.prod(shape)) for shape in expected)
    params_bytes = data[blob_end : len(data) - 4]
    if len(params_bytes) != 4 * n_params:
        raise FormatError(
            f"{path}: parameter payload holds {len(params_bytes) // 4} floats, "
            f"topology needs {n_params}"
        )
    flat = np.frombuffer(params_bytes, dtype="<f4").astype(np.float64)

    arrays = []
    offset = 0
    for shape in expected:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape))
        offset += size
    body = []
    for i, width in enumerate(widths):
        body.append(DenseLayer(arrays[2 * i], arrays[2 * i + 1], activations[i]))
    k = 2 * len(widths)
    net = ActorCriticNet(
        obs_dim,
        action_count,
        body,
        DenseLayer(arrays[k], arrays[k + 1]),
        DenseLayer(arrays[k + 2], arrays[k + 3]),
    )
    assert parameter_count(net) == n_params
    return net, provenance


def load_policy(path: str, expect_spec: EnvSpec | None = None) -> ActorCriticNet:
    """Load a checkpointed policy, optionally checking it fits an environment."""
    net, _ = load_checkpoint(path)
    if expect_spec is not None and (
        net.obs_dim != expect_spec.obs_dim
        or net.action_count != expect_spec.action_count
    ):
        raise ConfigError(
            f"checkpoint topology ({net.obs_dim} obs, {net.action_count} actions) "
            f"does not match environment {expect_spec.id!r} "
            f"({expect_spec.obs_dim} obs, {expect_spec.action_count} actions)"
        )
    return net


def _shape_plan(obs_dim: int, action_count: int, widths: list[int]):
    shapes = []
    dim = obs_dim
    for width in widths:
        shapes.append((width, dim))
        shapes.append((width,))
        dim = width
    shapes.append((action_count, dim))
    shapes.append((action_count,))
    shapes.append((1, dim))
    shapes.append((1,))
    return shapes


def _record_dtype(obs_dim: int, action_count: int) -> np.dtype:
    return np.dtype(
        [("obs", "<f4", (obs_dim,)), ("probs", "<f4", (action_count,)), ("action", "<u2")]
    )


def save_replay(buffer: ReplayBuffer, path: str) -> None:
    """Serialize a replay buffer; empty buffers are rejected at construction."""
    n = len(buffer)
    if buffer.action_count > 0xFFFF:
        raise ConfigError("action count exceeds the u16 record field")
    records = np.zeros(n, dtype=_record_dtype(buffer.obs_dim, buffer.action_count))
    records["obs"] = buffer.observations.astype("<f4")
    records["probs"] = buffer.probabilities.astype("<f4")
    records["action"] = buffer.actions.astype("<u2")
    meta = _canonical_json(buffer.metadata)
    payload = bytearray()
    payload += REPLAY_MAGIC
    payload += struct.pack("<I", FORMAT_VERSION)
    payload += struct.pack("<II", buffer.obs_dim, buffer.action_count)
    payload += struct.pack("<QQ", n, buffer.seed & 0xFFFFFFFFFFFFFFFF)
    payload += records.tobytes()
    payload += struct.pack("<I", len(meta))
    payload += meta
    atomic_write(path, bytes(payload))


def load_replay(path: str) -> ReplayBuffer:
    data = _read_file(path)
    header = struct.calcsize("<4sIIIQQ")
    if len(data) < header:
        raise FormatError(f"{path}: too short to be a replay buffer")
    magic, version, obs_dim, action_count, count, seed = struct.unpack_from(
        "<4sIIIQQ", data, 0
    )
    if magic != REPLAY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {REPLAY_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dtype = _record_dtype(obs_dim, action_count)
    records_end = header + count * dtype.itemsize
    if records_end + 4 > len(data):
        raise FormatError(
            f"{path}: truncated records (header promises {count} records)"
        )
    records = np.frombuffer(data[header:records_end], dtype=dtype)
    (meta_len,) = struct.unpack_from("<I", data, records_end)
    meta_end = records_end + 4 + meta_len
    if meta_end != len(data):
        raise FormatError(f"{path}: metadata length disagrees with file size")
    try:
        metadata = json.loads(data[records_end + 4 : meta_end].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as err:
        raise FormatError(f"{path}: malformed metadata JSON: {err}") from err
    return ReplayBuffer(
        records["obs"].astype(np.float64),
        records["probs"].astype(np.float64),
        records["action"].astype(np.int64),
        int(seed),
        metadata,
    )
