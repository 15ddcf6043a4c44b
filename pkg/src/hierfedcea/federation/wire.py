"""Update payload framing and communication byte counts.

A HierFedCEA update is facility id and round (two little-endian uint32)
followed by the 18 Tier-1 and 17 Tier-2 values as little-endian float32:
148 bytes framed, 140 of them model payload. The Tier-3 value has no slot.
"""

from __future__ import annotations

import struct

import numpy as np

from ..model import CLUSTER_IDX, GLOBAL_IDX

HEADER = struct.Struct("<II")
N_SHARED = len(GLOBAL_IDX) + len(CLUSTER_IDX)  # 35
PAYLOAD_BYTES = 4 * N_SHARED  # 140
FRAME_BYTES = HEADER.size + PAYLOAD_BYTES  # 148


class WireError(ValueError):
    pass


def encode_update(facility_id: int, round_: int, delta_g: np.ndarray, delta_c: np.ndarray) -> bytes:
    delta_g = np.asarray(delta_g)
    delta_c = np.asarray(delta_c)
    if delta_g.shape != (len(GLOBAL_IDX),) or delta_c.shape != (len(CLUSTER_IDX),):
        raise WireError("update must carry exactly 18 + 17 values")
    body = np.concatenate([delta_g, delta_c]).astype("<f4").tobytes()
    return HEADER.pack(facility_id, round_) + body


def decode_update(frame: bytes) -> tuple[int, int, np.ndarray, np.ndarray]:
    if len(frame) != FRAME_BYTES:
        raise WireError(f"expected {FRAME_BYTES} bytes, got {len(frame)}")
    fid, rnd = HEADER.unpack_from(frame)
    vals = np.frombuffer(frame, dtype="<f4", offset=HEADER.size).astype(float)
    return fid, rnd, vals[: len(GLOBAL_IDX)], vals[len(GLOBAL_IDX):]


def round_payload_bytes(n_facilities: int, floats_per_direction: int = N_SHARED,
                        directions: int = 2) -> int:
    """Model payload bytes for one synchronized round (upload plus download)."""
    return n_facilities * directions * 4 * floats_per_direction


def total_payload_bytes(n_facilities: int, rounds: int, floats_per_direction: int = N_SHARED) -> int:
    return rounds * round_payload_bytes(n_facilities, floats_per_direction)
