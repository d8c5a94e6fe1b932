"""
Binary checkpoints of a flow state.

Layout (little endian)::

    header  struct "<4sHII3d": magic b"BPLN", version (u16), nx, ny (u32),
            t, epsilon, grashof (f64)
    body    complex64 half spectrum, shape (ny, nx // 2 + 1), row major

The body is single precision, so a round trip reproduces coefficients to
about 1e-7 relative.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dynamics import FlowParams, FlowState
from .spectral import SpectralField, make_lattice

MAGIC = b"BPLN"
VERSION = 1
HEADER = struct.Struct("<4sHII3d")


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def encode(state: FlowState) -> bytes:
    lat = state.lattice
    head = HEADER.pack(MAGIC, VERSION, lat.nx, lat.ny, float(state.t),
                       float(state.params.epsilon), float(state.params.grashof))
    body = np.ascontiguousarray(state.omega.coeffs, dtype="<c8").tobytes()
    return head + body


def decode(data: bytes) -> FlowState:
    if len(data) < HEADER.size:
        raise CheckpointError("file shorter than the checkpoint header")
    magic, version, nx, ny, t, eps, gr = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    lat = make_lattice(nx, ny)
    expected = HEADER.size + lat.shape[0] * lat.shape[1] * 8
    if len(data) != expected:
        raise CheckpointError(f"expected {expected} bytes for a {nx}x{ny} state, got {len(data)}")
    coeffs = np.frombuffer(data, dtype="<c8", offset=HEADER.size).reshape(lat.shape)
    return FlowState(SpectralField(lat, coeffs.astype(complex)), t, FlowParams(eps, gr))


def save_checkpoint(path, state: FlowState) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(state))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> FlowState:
    return decode(Path(path).read_bytes())
