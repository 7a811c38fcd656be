"""Process-wide model session.

A session owns one model bundle, serializes all inference through a
single lock (one device queue), and keeps a small LRU cache of
conditioning embeddings.  ``get_session`` enforces the one-model-per-
process rule: asking for a second model id after the first has loaded is
an error, not a silent reload.

Environment: ``BRIDGE_DEVICE`` selects the torch device (default cpu),
``BRIDGE_MODEL_PATH`` names a directory where generated noise-predictor
weights are persisted and reloaded.
"""

from __future__ import annotations

import hashlib
import os
import threading
from collections import OrderedDict
from pathlib import Path

import torch

from .models import DEFAULT_MODEL_ID, EMBED_DIM, build_model

COND_CACHE_SIZE = 128


def conditioning_vector(text: str, dim: int = EMBED_DIM) -> torch.Tensor:
    """Deterministic embedding for a conditioning id; empty id is zeros."""
    if text == "":
        return torch.zeros(dim)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little") & (2**63 - 1)
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(dim, generator=generator)


class BridgeSession:
    def __init__(
        self,
        model_id: str = DEFAULT_MODEL_ID,
        device: str | None = None,
        weights_dir: str | Path | None = None,
    ):
        self.model_id = model_id
        self.device = device or os.environ.get("BRIDGE_DEVICE", "cpu")
        if weights_dir is None:
            weights_dir = os.environ.get("BRIDGE_MODEL_PATH") or None
        self.weights_dir = weights_dir
        self._bundle = build_model(model_id, device=self.device, weights_dir=weights_dir)
        self._lock = threading.Lock()
        self._cond_cache: OrderedDict[str, torch.Tensor] = OrderedDict()

    @property
    def cached_conditionings(self) -> int:
        return len(self._cond_cache)

    def _conditioning(self, text: str) -> torch.Tensor:
        vec = self._cond_cache.get(text)
        if vec is None:
            vec = conditioning_vector(text)
            self._cond_cache[text] = vec
            while len(self._cond_cache) > COND_CACHE_SIZE:
                self._cond_cache.popitem(last=False)
        else:
            self._cond_cache.move_to_end(text)
        return vec

    def predict_eps(self, z: torch.Tensor, timestep: int, conditioning: str = "") -> torch.Tensor:
        with self._lock, torch.no_grad():
            cond_vec = self._conditioning(conditioning)
            z = z.to(self.device)
            return self._bundle.denoiser.predict(z, timestep, cond_vec).to("cpu")

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        with self._lock, torch.no_grad():
            return self._bundle.codec.encode(image.to(self.device)).to("cpu")

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        with self._lock, torch.no_grad():
            return self._bundle.codec.decode(latent.to(self.device)).to("cpu")

    def score(self, image: torch.Tensor) -> torch.Tensor:
        with self._lock, torch.no_grad():
            return self._bundle.scorer.score(image.to(self.device)).to("cpu")


_process_session: BridgeSession | None = None
_process_lock = threading.Lock()


def get_session(
    model_id: str | None = None,
    device: str | None = None,
    weights_dir: str | Path | None = None,
) -> BridgeSession:
    """Return the process-wide session, creating it on first use."""
    global _process_session
    with _process_lock:
        if _process_session is None:
            _process_session = BridgeSession(
                model_id=model_id or DEFAULT_MODEL_ID,
                device=device,
                weights_dir=weights_dir,
            )
        elif model_id is not None and model_id != _process_session.model_id:
            raise RuntimeError(
                f"process already serves model {_process_session.model_id!r}; "
                f"cannot also load {model_id!r} (one model per process)"
            )
        return _process_session


def reset_session() -> None:
    """Drop the process-wide session (tests and explicit reloads only)."""
    global _process_session
    with _process_lock:
        _process_session = None
