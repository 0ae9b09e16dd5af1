"""Versioned binary serialization of trained models.

A sequence file is a fixed header (magic, version, mode, dimensions,
stage count) followed by each stage's gain (row-major) and bias as
little-endian float64. An online-state file reuses that layout and
appends the forgetting factor, the sample weight, and one inverse
information matrix per stage. Round-trips are exact.
"""
from __future__ import annotations

import struct

import numpy as np

from .core import DescentSequence, DescentStep, Mode
from .errors import ModelFormatError
from .online import OnlineState, _weights_from_step

SEQ_MAGIC = b"SDMQ"
ONLINE_MAGIC = b"SDMO"
FORMAT_VERSION = 1

_MODE_CODES = {Mode.TEMPLATE: 0, Mode.REVERSED: 1, Mode.GENERALIZED: 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


def _pack_header(magic: bytes, mode: Mode, p: int, m: int, stages: int) -> bytes:
    return magic + struct.pack("<HBIII", FORMAT_VERSION, _MODE_CODES[mode], p, m, stages)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise ModelFormatError("model file truncated")
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).copy()


def _read_header(reader: _Reader, magic: bytes):
    if reader.take(4) != magic:
        raise ModelFormatError("bad magic; not a model file of this kind")
    version, mode_code, p, m, stages = reader.unpack("<HBIII")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if mode_code not in _CODE_MODES:
        raise ModelFormatError(f"unknown mode code {mode_code}")
    return _CODE_MODES[mode_code], p, m, stages


def sequence_bytes(seq: DescentSequence) -> bytes:
    parts = [_pack_header(SEQ_MAGIC, seq.mode, seq.param_dim, seq.feature_dim, len(seq))]
    for step in seq.steps:
        parts.append(np.ascontiguousarray(step.gain, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(step.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def save_sequence(seq: DescentSequence, path) -> None:
    with open(path, "wb") as f:
        f.write(sequence_bytes(seq))


def sequence_from_bytes(data: bytes) -> DescentSequence:
    reader = _Reader(data)
    mode, p, m, stages = _read_header(reader, SEQ_MAGIC)
    steps = []
    for _ in range(stages):
        gain = reader.array((p, m))
        bias = reader.array((p,))
        steps.append(DescentStep(gain=gain, bias=bias))
    return DescentSequence(steps=tuple(steps), param_dim=p, feature_dim=m, mode=mode)


def load_sequence(path) -> DescentSequence:
    with open(path, "rb") as f:
        return sequence_from_bytes(f.read())


def save_online_state(state: OnlineState, path) -> None:
    parts = [
        _pack_header(
            ONLINE_MAGIC, Mode.GENERALIZED, state.param_dim, state.feature_dim,
            state.n_stages,
        ),
        struct.pack("<dd", state.forgetting, state.sample_weight),
    ]
    for step in state.steps:
        parts.append(np.ascontiguousarray(step.gain, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(step.bias, dtype="<f8").tobytes())
    for S in state.inv_cov:
        parts.append(np.ascontiguousarray(S, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_online_state(path) -> OnlineState:
    with open(path, "rb") as f:
        reader = _Reader(f.read())
    _, p, m, stages = _read_header(reader, ONLINE_MAGIC)
    forgetting, sample_weight = reader.unpack("<dd")
    weights = []
    for _ in range(stages):
        gain = reader.array((p, m))
        bias = reader.array((p,))
        weights.append(_weights_from_step(DescentStep(gain=gain, bias=bias)))
    inv_cov = [reader.array((m + 1, m + 1)) for _ in range(stages)]
    return OnlineState(
        weights=weights,
        inv_cov=inv_cov,
        param_dim=p,
        feature_dim=m,
        forgetting=forgetting,
        sample_weight=sample_weight,
    )
