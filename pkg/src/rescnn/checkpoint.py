"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"RCNN"
    offset 4   uint32    format version
    offset 8   uint64    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header (sorted keys, no whitespace)
    ...        zero padding up to the next multiple of 8
    payload    float64 little-endian tensors, back to back, in manifest order

Header keys: ``config`` (ResCnnConfig fields), ``meta`` (free-form run metadata,
e.g. ``epoch`` and ``history_digest``), ``adam`` (``t``, ``beta1``, ``beta2``,
``eps``) and ``tensors``: a list of ``{"name", "shape", "offset"}`` with
offsets in bytes relative to the start of the payload.  Tensor names are the
model's parameter and buffer names plus ``adam.m.<param>`` / ``adam.v.<param>``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ResCnnConfig, ResCnnModel, build_model
from .optim import AdamState
from .tensor import Rng

MAGIC = b"RCNN"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_LE_F64 = np.dtype("<f8")


def _encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(m: ResCnnModel, opt_state: AdamState, path) -> None:
    tensors = dict(m.state_arrays())
    for name in m.parameters():
        tensors[f"adam.m.{name}"] = opt_state.m[name]
        tensors[f"adam.v.{name}"] = opt_state.v[name]

    manifest, offset = [], 0
    for name, arr in tensors.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = _encode_header({
        "config": m.config.to_dict(),
        "meta": m.meta,
        "adam": {"t": opt_state.t, "beta1": opt_state.beta1, "beta2": opt_state.beta2, "eps": opt_state.eps},
        "tensors": manifest,
    })
    pad = (-(_PREFIX.size + len(header))) % 8

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        f.write(b"\0" * pad)
        for arr in tensors.values():
            f.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, int]:
    """Parse the prefix and JSON header; returns ``(header, payload_start)``."""
    with open(path, "rb") as f:
        prefix = f.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise CheckpointError(f"{path}: truncated prefix ({len(prefix)} of {_PREFIX.size} bytes)")
        magic, version, hlen = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r} at offset 0")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version} at offset 4 (expected {VERSION})")
        raw = f.read(hlen)
        if len(raw) < hlen:
            raise CheckpointError(f"{path}: header truncated at offset {_PREFIX.size + len(raw)} (expected {hlen} bytes)")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header at offset {_PREFIX.size}: {exc}") from None
    start = _PREFIX.size + hlen
    start += (-start) % 8
    return header, start


def load_checkpoint(path) -> tuple[ResCnnModel, AdamState]:
    header, start = read_header(path)
    data = Path(path).read_bytes()
    payload = memoryview(data)[start:]

    try:
        cfg = ResCnnConfig(**header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config in header: {exc}") from None
    # build a skeleton with the right structure; every array is overwritten below
    m = build_model(cfg, Rng(0))
    m.meta = header.get("meta", {})
    adam = header["adam"]
    state = AdamState.for_params(m.parameters(), t=int(adam["t"]), beta1=adam["beta1"],
                                 beta2=adam["beta2"], eps=adam["eps"])

    targets = dict(m.state_arrays())
    for name in m.parameters():
        targets[f"adam.m.{name}"] = state.m[name]
        targets[f"adam.v.{name}"] = state.v[name]

    seen = set()
    expected_offset = 0
    for entry in header["tensors"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in targets:
            raise CheckpointError(f"{path}: unknown tensor {name!r} in manifest (payload offset {off})")
        target = targets[name]
        if shape != target.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} at payload offset {off} has manifest shape {shape}, "
                f"config implies {target.shape}"
            )
        if off != expected_offset:
            raise CheckpointError(f"{path}: tensor {name!r} offset {off}, expected {expected_offset}")
        nbytes = target.size * 8
        if off + nbytes > len(payload):
            raise CheckpointError(
                f"{path}: payload truncated: {name!r} needs bytes {start + off}..{start + off + nbytes}, "
                f"file has {len(data)}"
            )
        target[...] = np.frombuffer(payload[off:off + nbytes], dtype=_LE_F64).reshape(shape)
        expected_offset = off + nbytes
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"{path}: manifest lacks tensors {sorted(missing)}")
    if expected_offset != len(payload):
        raise CheckpointError(
            f"{path}: {len(payload) - expected_offset} trailing bytes after payload offset {expected_offset}"
        )
    return m, state


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
