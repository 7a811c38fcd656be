"""Byte-level framing for the denoiser service.

A frame is a 4-byte little-endian unsigned length followed by that many
bytes: a 1-byte opcode and an opcode-specific payload.  Tensors travel as
``LAT1`` records: 4 magic bytes, three little-endian uint32 (channels,
height, width), then channels*height*width IEEE-754 float32 little-endian
values in (channel, row, column) row-major order.  Timesteps are 4-byte
little-endian unsigned integers; conditioning ids are length-prefixed
UTF-8.  Error payloads carry a 1-byte code and a length-prefixed message.

Opcodes: 0 PING, 1 PREDICT_EPS, 2 ENCODE, 3 DECODE, 4 SCORE_REGIONS,
255 ERROR.  Error codes: 1 malformed frame, 2 shape mismatch, 3 model
failure.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

PROTOCOL_VERSION = 1

OP_PING = 0
OP_PREDICT_EPS = 1
OP_ENCODE = 2
OP_DECODE = 3
OP_SCORE_REGIONS = 4
OP_ERROR = 255

ERR_MALFORMED = 1
ERR_SHAPE = 2
ERR_MODEL = 3

MAX_FRAME_BYTES = 256 * 1024 * 1024

TENSOR_MAGIC = b"LAT1"

_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<III")


class WireError(Exception):
    """Stream-level framing violation; the frame boundary cannot be trusted."""


class PayloadError(Exception):
    """The frame was well delimited but its payload does not parse."""


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    body = bytes([opcode]) + payload
    if len(body) > MAX_FRAME_BYTES:
        raise WireError(f"frame of {len(body)} bytes exceeds the {MAX_FRAME_BYTES} limit")
    return _U32.pack(len(body)) + body


def encode_error(code: int, message: str) -> bytes:
    msg = message.encode("utf-8")
    return encode_frame(OP_ERROR, bytes([code]) + _U32.pack(len(msg)) + msg)


def _read_exact(rfile, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = rfile.read(remaining)
        if not chunk:
            raise EOFError(f"peer closed with {remaining} of {n} bytes unread")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(rfile) -> tuple[int, bytes]:
    """Read one frame; returns (opcode, payload).  Raises EOFError on clean close."""
    header = rfile.read(4)
    if not header:
        raise EOFError("connection closed")
    if len(header) < 4:
        header += _read_exact(rfile, 4 - len(header))
    (length,) = _U32.unpack(header)
    if length == 0 or length > MAX_FRAME_BYTES:
        raise WireError(f"frame length {length} outside (0, {MAX_FRAME_BYTES}]")
    body = _read_exact(rfile, length)
    return body[0], body[1:]


def tensor_to_bytes(t: torch.Tensor) -> bytes:
    """Serialize a (C, H, W) tensor as one ``LAT1`` record."""
    if t.dim() != 3:
        raise PayloadError(f"tensor must be (C, H, W), got {t.dim()} dimensions")
    arr = t.detach().to("cpu", torch.float32).contiguous().numpy()
    c, h, w = arr.shape
    return TENSOR_MAGIC + _DIMS.pack(c, h, w) + arr.astype("<f4").tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[torch.Tensor, int]:
    """Parse one ``LAT1`` record starting at ``offset``; returns (tensor, end offset)."""
    if len(buf) - offset < 16:
        raise PayloadError("tensor record truncated before header")
    if buf[offset : offset + 4] != TENSOR_MAGIC:
        raise PayloadError("bad tensor magic bytes")
    c, h, w = _DIMS.unpack_from(buf, offset + 4)
    if c == 0 or h == 0 or w == 0:
        raise PayloadError(f"tensor header has zero dimension: {(c, h, w)}")
    n = c * h * w
    end = offset + 16 + 4 * n
    if len(buf) < end:
        raise PayloadError(
            f"tensor record truncated: header claims {n} floats, "
            f"{(len(buf) - offset - 16) // 4} present"
        )
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=offset + 16)
    return torch.from_numpy(data.reshape(c, h, w).copy()), end


def decode_predict_eps(payload: bytes) -> tuple[torch.Tensor, int, str]:
    """Split a PREDICT_EPS payload into (latent, timestep, conditioning id)."""
    z, off = tensor_from_bytes(payload)
    if len(payload) < off + 8:
        raise PayloadError("predict_eps payload truncated after tensor")
    (timestep,) = _U32.unpack_from(payload, off)
    (n,) = _U32.unpack_from(payload, off + 4)
    end = off + 8 + n
    if len(payload) < end:
        raise PayloadError("conditioning id truncated")
    try:
        conditioning = payload[off + 8 : end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PayloadError(f"conditioning id is not UTF-8: {exc}") from exc
    return z, timestep, conditioning


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 5:
        raise PayloadError("error frame payload truncated")
    code = payload[0]
    (n,) = _U32.unpack_from(payload, 1)
    if len(payload) < 5 + n:
        raise PayloadError("error frame message truncated")
    return code, payload[5 : 5 + n].decode("utf-8", errors="replace")
