"""Toy denoiser bridge: serves a seeded model family over a tensor protocol."""

from .models import (
    DEFAULT_MODEL_ID,
    MODEL_REGISTRY,
    RECONSTRUCTION_ERROR_BOUND,
    EpsNet,
    GradientScorer,
    HaarCodec,
    ModelBundle,
    ModelSpec,
    ToyDenoiser,
    build_model,
)
from .server import (
    DEFAULT_PORT,
    BridgeServer,
    entry,
    parse_listen_addr,
    serve,
    serve_connection,
)
from .session import (
    COND_CACHE_SIZE,
    BridgeSession,
    conditioning_vector,
    get_session,
    reset_session,
)
from .wire import (
    ERR_MALFORMED,
    ERR_MODEL,
    ERR_SHAPE,
    MAX_FRAME_BYTES,
    OP_DECODE,
    OP_ENCODE,
    OP_ERROR,
    OP_PING,
    OP_PREDICT_EPS,
    OP_SCORE_REGIONS,
    PROTOCOL_VERSION,
    PayloadError,
    WireError,
    decode_error,
    decode_predict_eps,
    encode_error,
    encode_frame,
    read_frame,
    tensor_from_bytes,
    tensor_to_bytes,
)

__all__ = [
    "BridgeServer",
    "BridgeSession",
    "COND_CACHE_SIZE",
    "DEFAULT_MODEL_ID",
    "DEFAULT_PORT",
    "ERR_MALFORMED",
    "ERR_MODEL",
    "ERR_SHAPE",
    "EpsNet",
    "GradientScorer",
    "HaarCodec",
    "MAX_FRAME_BYTES",
    "MODEL_REGISTRY",
    "ModelBundle",
    "ModelSpec",
    "OP_DECODE",
    "OP_ENCODE",
    "OP_ERROR",
    "OP_PING",
    "OP_PREDICT_EPS",
    "OP_SCORE_REGIONS",
    "PROTOCOL_VERSION",
    "PayloadError",
    "RECONSTRUCTION_ERROR_BOUND",
    "ToyDenoiser",
    "WireError",
    "build_model",
    "conditioning_vector",
    "decode_error",
    "decode_predict_eps",
    "encode_error",
    "encode_frame",
    "entry",
    "get_session",
    "parse_listen_addr",
    "read_frame",
    "reset_session",
    "serve",
    "serve_connection",
    "tensor_from_bytes",
    "tensor_to_bytes",
]
