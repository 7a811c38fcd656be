"""Denoiser wire protocol: framing, client, and an in-process mock server.

Frames are length-prefixed over a stream socket: a 4-byte little-endian
unsigned length, then that many bytes consisting of a 1-byte opcode and an
opcode-specific payload.  Tensors travel as ``.lat`` records (magic, C/H/W
header, little-endian float32).  Timesteps are 4-byte little-endian
unsigned training-timestep indices; conditioning ids are length-prefixed
UTF-8.

Opcodes: 0 PING, 1 PREDICT_EPS, 2 ENCODE, 3 DECODE, 4 SCORE_REGIONS,
255 ERROR.  Error payloads carry a 1-byte code (1 malformed frame, 2 shape
mismatch, 3 model failure) and a length-prefixed message.  One request is
in flight per connection; malformed frames are answered with an error
frame and the connection is closed, model failures keep it open.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    ParameterError,
    RemoteProtocolError,
    RemoteTransportError,
)
from .grids import LatentGrid, ScoreMap
from .gridio import lat_from_bytes, lat_to_bytes

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

_U32 = struct.Struct("<I")


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    body = bytes([opcode]) + payload
    if len(body) > MAX_FRAME_BYTES:
        raise ParameterError(f"frame of {len(body)} bytes exceeds the {MAX_FRAME_BYTES} limit")
    return _U32.pack(len(body)) + body


def encode_error(code: int, message: str) -> bytes:
    msg = message.encode("utf-8")
    return encode_frame(OP_ERROR, bytes([code]) + _U32.pack(len(msg)) + msg)


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 5:
        raise RemoteProtocolError("error frame payload truncated")
    code = payload[0]
    (n,) = _U32.unpack_from(payload, 1)
    if len(payload) < 5 + n:
        raise RemoteProtocolError("error frame message truncated")
    return code, payload[5 : 5 + n].decode("utf-8", errors="replace")


def encode_predict_eps(z: LatentGrid, timestep: int, conditioning: str = "") -> bytes:
    cond = conditioning.encode("utf-8")
    return lat_to_bytes(z) + _U32.pack(timestep) + _U32.pack(len(cond)) + cond


def decode_predict_eps(payload: bytes) -> tuple[LatentGrid, int, str]:
    grid, off = lat_from_bytes(payload)
    if len(payload) < off + 8:
        raise RemoteProtocolError("predict_eps payload truncated after tensor")
    (timestep,) = _U32.unpack_from(payload, off)
    (n,) = _U32.unpack_from(payload, off + 4)
    end = off + 8 + n
    if len(payload) < end:
        raise RemoteProtocolError("conditioning id truncated")
    return grid, timestep, payload[off + 8 : end].decode("utf-8")


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
    """Read one frame; returns (opcode, payload). Raises EOFError on clean close."""
    header = rfile.read(4)
    if not header:
        raise EOFError("connection closed")
    if len(header) < 4:
        header += _read_exact(rfile, 4 - len(header))
    (length,) = _U32.unpack(header)
    if length == 0 or length > MAX_FRAME_BYTES:
        raise RemoteProtocolError(f"frame length {length} outside (0, {MAX_FRAME_BYTES}]")
    body = _read_exact(rfile, length)
    return body[0], body[1:]


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ParameterError(f"endpoint must look like host:port, got {endpoint!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ParameterError(f"endpoint port is not an integer: {endpoint!r}") from None


class ProtocolClient:
    """Blocks on one request at a time over a single connection.

    Transport failures are retried once (configurable) on a fresh
    connection; protocol-level errors are not retried.
    """

    def __init__(self, endpoint: str, timeout: float = 120.0, retries: int = 1):
        self.host, self.port = parse_endpoint(endpoint)
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self._sock: socket.socket | None = None
        self._rfile = None

    def _connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        sock.settimeout(self.timeout)
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def close(self) -> None:
        if self._rfile is not None:
            try:
                self._rfile.close()
            except OSError:
                pass
            self._rfile = None
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, opcode: int, payload: bytes = b"") -> tuple[int, bytes]:
        attempts = self.retries + 1
        last: Exception | None = None
        for _ in range(attempts):
            try:
                if self._sock is None:
                    self._connect()
                self._sock.sendall(encode_frame(opcode, payload))
                return read_frame(self._rfile)
            except (OSError, EOFError) as exc:
                last = exc
                self.close()
        raise RemoteTransportError(
            f"request to {self.endpoint} failed after {attempts} attempts: {last}",
            attempts=attempts,
            deadline=self.timeout,
        )

    def _expect(self, opcode: int, payload: bytes, want: int) -> bytes:
        got, body = self.request(opcode, payload)
        if got == OP_ERROR:
            code, message = decode_error(body)
            self.close()
            raise RemoteProtocolError(f"remote error code {code}: {message}")
        if got != want:
            self.close()
            raise RemoteProtocolError(f"expected response opcode {want}, got {got}")
        return body

    def ping(self) -> int:
        body = self._expect(OP_PING, b"", OP_PING)
        if len(body) != 4:
            raise RemoteProtocolError(f"ping response payload has {len(body)} bytes, want 4")
        return _U32.unpack(body)[0]

    def predict_eps(self, z: LatentGrid, timestep: int, conditioning: str = "") -> LatentGrid:
        body = self._expect(OP_PREDICT_EPS, encode_predict_eps(z, timestep, conditioning), OP_PREDICT_EPS)
        grid, _ = lat_from_bytes(body)
        if grid.shape != z.shape:
            raise RemoteProtocolError(
                f"remote eps shape {grid.shape} does not match input {z.shape}"
            )
        return grid

    def encode_image(self, image: LatentGrid) -> LatentGrid:
        body = self._expect(OP_ENCODE, lat_to_bytes(image), OP_ENCODE)
        return lat_from_bytes(body)[0]

    def decode_latent(self, latent: LatentGrid) -> LatentGrid:
        body = self._expect(OP_DECODE, lat_to_bytes(latent), OP_DECODE)
        return lat_from_bytes(body)[0]

    def score_regions(self, image: LatentGrid) -> ScoreMap:
        body = self._expect(OP_SCORE_REGIONS, lat_to_bytes(image), OP_SCORE_REGIONS)
        grid = lat_from_bytes(body)[0]
        if grid.channels != 1:
            raise RemoteProtocolError(f"score map must have 1 channel, got {grid.channels}")
        scores = np.clip(grid.data[0], 0.0, 1.0)
        return ScoreMap(scores)


@dataclass
class MockModel:
    """Pluggable behavior for the in-process mock server.

    Defaults: zero eps, identity encode/decode, no region scorer (model
    failure frames).
    """

    predict_fn: object = None
    encode_fn: object = None
    decode_fn: object = None
    score_fn: object = None

    def predict(self, z: LatentGrid, timestep: int, conditioning: str) -> LatentGrid:
        if self.predict_fn is None:
            return LatentGrid.zeros(*z.shape)
        return self.predict_fn(z, timestep, conditioning)

    def encode(self, image: LatentGrid) -> LatentGrid:
        if self.encode_fn is None:
            return image
        return self.encode_fn(image)

    def decode(self, latent: LatentGrid) -> LatentGrid:
        if self.decode_fn is None:
            return latent
        return self.decode_fn(latent)

    def score(self, image: LatentGrid) -> ScoreMap:
        if self.score_fn is None:
            raise RuntimeError("no region scorer configured")
        return self.score_fn(image)


def serve_connection(rfile, wfile, model) -> None:
    """Answer frames until the peer closes or sends a malformed frame.

    ``model`` needs predict/encode/decode/score methods (see MockModel).
    Reusable by any server implementation of this protocol.
    """
    while True:
        try:
            opcode, payload = read_frame(rfile)
        except EOFError:
            return
        except RemoteProtocolError as exc:
            wfile.write(encode_error(ERR_MALFORMED, str(exc)))
            wfile.flush()
            return
        try:
            response = _dispatch(opcode, payload, model)
        except (RemoteProtocolError, FormatError) as exc:
            # shape/parse failure inside a well-delimited frame: report and close
            wfile.write(encode_error(ERR_SHAPE, str(exc)))
            wfile.flush()
            return
        except _UnknownOpcode as exc:
            wfile.write(encode_error(ERR_MALFORMED, str(exc)))
            wfile.flush()
            return
        except Exception as exc:  # model failure: answer and keep serving
            wfile.write(encode_error(ERR_MODEL, f"{type(exc).__name__}: {exc}"))
            wfile.flush()
            continue
        wfile.write(response)
        wfile.flush()


class _UnknownOpcode(Exception):
    pass


def _dispatch(opcode: int, payload: bytes, model) -> bytes:
    if opcode == OP_PING:
        return encode_frame(OP_PING, _U32.pack(PROTOCOL_VERSION))
    if opcode == OP_PREDICT_EPS:
        z, timestep, conditioning = decode_predict_eps(payload)
        eps = model.predict(z, timestep, conditioning)
        if eps.shape != z.shape:
            raise RemoteProtocolError(f"model eps shape {eps.shape} != input {z.shape}")
        return encode_frame(OP_PREDICT_EPS, lat_to_bytes(eps))
    if opcode == OP_ENCODE:
        image, _ = lat_from_bytes(payload)
        return encode_frame(OP_ENCODE, lat_to_bytes(model.encode(image)))
    if opcode == OP_DECODE:
        latent, _ = lat_from_bytes(payload)
        return encode_frame(OP_DECODE, lat_to_bytes(model.decode(latent)))
    if opcode == OP_SCORE_REGIONS:
        image, _ = lat_from_bytes(payload)
        score = model.score(image)
        grid = LatentGrid(score.scores[None, :, :])
        return encode_frame(OP_SCORE_REGIONS, lat_to_bytes(grid))
    raise _UnknownOpcode(f"unknown opcode {opcode}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        try:
            serve_connection(self.rfile, self.wfile, self.server.model)
        except (OSError, ValueError):
            pass


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class MockBridgeServer:
    """In-process protocol server for tests and toy runs.

    Usage::

        with MockBridgeServer(MockModel()) as server:
            client = ProtocolClient(server.endpoint)
    """

    def __init__(self, model: MockModel | None = None, host: str = "127.0.0.1", port: int = 0):
        self._server = _TCPServer((host, port), _Handler)
        self._server.model = model or MockModel()
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "MockBridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def run_conformance(endpoint: str, timeout: float = 30.0) -> list[tuple[str, bool, str]]:
    """Engine-side protocol test vectors, run against any live server.

    Returns (name, passed, detail) per vector; a conformant server passes
    all of them.
    """
    results: list[tuple[str, bool, str]] = []

    def check(name: str, fn) -> None:
        try:
            fn()
            results.append((name, True, "ok"))
        except AssertionError as exc:
            results.append((name, False, str(exc)))
        except Exception as exc:
            results.append((name, False, f"{type(exc).__name__}: {exc}"))

    probe = LatentGrid(np.linspace(-1.0, 1.0, 3 * 16 * 16, dtype=np.float32).reshape(3, 16, 16))

    def ping_version():
        with ProtocolClient(endpoint, timeout=timeout) as client:
            version = client.ping()
            assert version >= 1, f"protocol version {version} < 1"

    def predict_shape():
        with ProtocolClient(endpoint, timeout=timeout) as client:
            latent = client.encode_image(probe)
            eps = client.predict_eps(latent, 181, "")
            assert eps.shape == latent.shape, f"eps shape {eps.shape} != {latent.shape}"
            assert np.all(np.isfinite(eps.data)), "eps contains non-finite values"

    def encode_decode_roundtrip():
        with ProtocolClient(endpoint, timeout=timeout) as client:
            latent = client.encode_image(probe)
            image = client.decode_latent(latent)
            assert image.shape == probe.shape, f"decode shape {image.shape} != {probe.shape}"

    def bad_tensor_header():
        bad = bytearray(encode_predict_eps(LatentGrid.zeros(1, 2, 2), 181, ""))
        # corrupt the width field so the declared size disagrees with the bytes
        bad[12:16] = _U32.pack(9)
        with ProtocolClient(endpoint, timeout=timeout) as client:
            opcode, payload = client.request(OP_PREDICT_EPS, bytes(bad))
            assert opcode == OP_ERROR, f"expected error frame, got opcode {opcode}"
            code, _ = decode_error(payload)
            assert code == ERR_SHAPE, f"expected error code {ERR_SHAPE}, got {code}"

    def unknown_opcode():
        with ProtocolClient(endpoint, timeout=timeout) as client:
            opcode, payload = client.request(200, b"junk")
            assert opcode == OP_ERROR, f"expected error frame, got opcode {opcode}"
            code, _ = decode_error(payload)
            assert code == ERR_MALFORMED, f"expected error code {ERR_MALFORMED}, got {code}"

    check("ping_version", ping_version)
    check("predict_eps_shape", predict_shape)
    check("encode_decode_roundtrip", encode_decode_roundtrip)
    check("bad_tensor_header_error_2", bad_tensor_header)
    check("unknown_opcode_error_1", unknown_opcode)
    return results
