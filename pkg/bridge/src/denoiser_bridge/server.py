"""TCP server answering tensor-protocol frames with the toy model family.

One request is in flight per connection.  A frame whose boundary cannot
be trusted is answered with error code 1 and the connection closes; a
well-delimited payload that fails to parse or violates a shape contract
is answered with code 2 and the connection closes; a model failure is
answered with code 3 and the connection stays open.
"""

from __future__ import annotations

import argparse
import socketserver
import struct
import threading

from .models import DEFAULT_MODEL_ID, MODEL_REGISTRY
from .session import BridgeSession, get_session
from .wire import (
    ERR_MALFORMED,
    ERR_MODEL,
    ERR_SHAPE,
    OP_DECODE,
    OP_ENCODE,
    OP_PING,
    OP_PREDICT_EPS,
    OP_SCORE_REGIONS,
    PROTOCOL_VERSION,
    PayloadError,
    WireError,
    decode_predict_eps,
    encode_error,
    encode_frame,
    read_frame,
    tensor_from_bytes,
    tensor_to_bytes,
)

_U32 = struct.Struct("<I")

DEFAULT_PORT = 7433


class _UnknownOpcode(Exception):
    pass


def _dispatch(opcode: int, payload: bytes, session: BridgeSession) -> bytes:
    if opcode == OP_PING:
        return encode_frame(OP_PING, _U32.pack(PROTOCOL_VERSION))
    if opcode == OP_PREDICT_EPS:
        z, timestep, conditioning = decode_predict_eps(payload)
        eps = session.predict_eps(z, timestep, conditioning)
        if eps.shape != z.shape:
            raise PayloadError(f"model eps shape {tuple(eps.shape)} != input {tuple(z.shape)}")
        return encode_frame(OP_PREDICT_EPS, tensor_to_bytes(eps))
    if opcode == OP_ENCODE:
        image, _ = tensor_from_bytes(payload)
        return encode_frame(OP_ENCODE, tensor_to_bytes(session.encode(image)))
    if opcode == OP_DECODE:
        latent, _ = tensor_from_bytes(payload)
        return encode_frame(OP_DECODE, tensor_to_bytes(session.decode(latent)))
    if opcode == OP_SCORE_REGIONS:
        image, _ = tensor_from_bytes(payload)
        scores = session.score(image).clamp(0.0, 1.0)
        return encode_frame(OP_SCORE_REGIONS, tensor_to_bytes(scores.unsqueeze(0)))
    raise _UnknownOpcode(f"unknown opcode {opcode}")


def serve_connection(rfile, wfile, session: BridgeSession) -> None:
    """Answer frames until the peer closes or sends a malformed frame."""
    while True:
        try:
            opcode, payload = read_frame(rfile)
        except EOFError:
            return
        except WireError as exc:
            wfile.write(encode_error(ERR_MALFORMED, str(exc)))
            wfile.flush()
            return
        try:
            response = _dispatch(opcode, payload, session)
        except PayloadError as exc:
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


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        try:
            serve_connection(self.rfile, self.wfile, self.server.session)
        except (OSError, ValueError):
            pass


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class BridgeServer:
    """Background TCP server bound to one session.

    Usage::

        with BridgeServer(session) as server:
            print(server.endpoint)
    """

    def __init__(self, session: BridgeSession, host: str = "127.0.0.1", port: int = 0):
        self._server = _TCPServer((host, port), _Handler)
        self._server.session = session
        self.session = session
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "BridgeServer":
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


def parse_listen_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ValueError(f"listen address must look like host:port, got {addr!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ValueError(f"listen address port is not an integer: {addr!r}") from None


def serve(listen_addr: str, model_id: str = DEFAULT_MODEL_ID) -> BridgeServer:
    """Start serving the given model on ``host:port`` and return the server."""
    host, port = parse_listen_addr(listen_addr)
    session = get_session(model_id)
    return BridgeServer(session, host=host, port=port).start()


def entry(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="denoiser-bridge",
        description="serve a toy denoiser, codec, and region scorer over TCP",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=DEFAULT_PORT)
    parser.add_argument(
        "--model-id",
        default=DEFAULT_MODEL_ID,
        choices=sorted(MODEL_REGISTRY),
        help="which generated model family to serve",
    )
    args = parser.parse_args(argv)
    try:
        server = serve(f"{args.host}:{args.port}", model_id=args.model_id)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", flush=True)
        return 1
    print(
        f"listening on {server.endpoint} model={args.model_id} device={server.session.device}",
        flush=True,
    )
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(entry())
