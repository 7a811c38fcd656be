"""Toy model family served over the wire: codec, noise predictor, scorer.

Every weight is generated from a hash of the model id, so two processes
configured with the same id serve identical functions without fetching
anything.  Optionally the generated noise-predictor weights are persisted
to a directory (``BRIDGE_MODEL_PATH``) and reloaded from there on the next
start.

The codec is an orthonormal 2x2 Haar transform: a (C, H, W) image with
even H and W maps to a (4C, H/2, W/2) latent and back exactly, up to
float32 rounding.  ``RECONSTRUCTION_ERROR_BOUND`` is the documented mean
absolute pixel error of an encode/decode round trip.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

RECONSTRUCTION_ERROR_BOUND = 1e-6

EMBED_DIM = 16
_HIDDEN = 16


def _component_seed(model_seed: int, component: str) -> int:
    digest = hashlib.sha256(f"{model_seed}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


class HaarCodec:
    """Orthonormal 2x2 block transform between image and latent space."""

    LATENT_CHANNEL_FACTOR = 4
    DOWNSAMPLE = 2

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        c, h, w = image.shape
        if h % 2 or w % 2:
            raise ValueError(f"codec needs even image dimensions, got {h}x{w}")
        a = image[:, 0::2, 0::2]
        b = image[:, 0::2, 1::2]
        cc = image[:, 1::2, 0::2]
        d = image[:, 1::2, 1::2]
        return torch.cat(
            [
                (a + b + cc + d) / 2,
                (a - b + cc - d) / 2,
                (a + b - cc - d) / 2,
                (a - b - cc + d) / 2,
            ],
            dim=0,
        )

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        c4, h, w = latent.shape
        if c4 % 4:
            raise ValueError(f"latent channels must be a multiple of 4, got {c4}")
        c = c4 // 4
        ll, lh, hl, hh = latent[:c], latent[c : 2 * c], latent[2 * c : 3 * c], latent[3 * c :]
        image = latent.new_empty((c, 2 * h, 2 * w))
        image[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2
        image[:, 0::2, 1::2] = (ll - lh + hl - hh) / 2
        image[:, 1::2, 0::2] = (ll + lh - hl - hh) / 2
        image[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2
        return image


class EpsNet(torch.nn.Module):
    """Two-layer conv net predicting noise for one channel count.

    The output is bounded by ``eps_scale`` through a tanh, which keeps
    long inversion/resampling chains numerically tame.
    """

    def __init__(self, channels: int, seed: int, eps_scale: float = 0.05):
        super().__init__()
        self.channels = channels
        self.eps_scale = eps_scale
        self.conv_in = torch.nn.Conv2d(channels, _HIDDEN, 3, padding=1)
        self.conv_out = torch.nn.Conv2d(_HIDDEN, channels, 3, padding=1)
        self.time_proj = torch.nn.Linear(EMBED_DIM, _HIDDEN)
        self.cond_proj = torch.nn.Linear(EMBED_DIM, _HIDDEN)
        self.register_buffer("freqs", torch.exp(torch.linspace(0.0, 6.0, EMBED_DIM // 2)))
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if param.dim() > 1:
                    fan_in = param.shape[1:].numel()
                    std = 0.5 / fan_in**0.5
                else:
                    std = 0.01
                param.copy_(torch.randn(param.shape, generator=generator) * std)

    def time_features(self, timestep: int) -> torch.Tensor:
        angle = (float(timestep) / 1000.0) * self.freqs
        return torch.cat([torch.sin(angle), torch.cos(angle)])

    def forward(self, z: torch.Tensor, timestep: int, cond_vec: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(z.unsqueeze(0))
        h = h + self.time_proj(self.time_features(timestep))[None, :, None, None]
        h = h + self.cond_proj(cond_vec.to(z))[None, :, None, None]
        out = self.conv_out(F.gelu(h))
        return self.eps_scale * torch.tanh(out).squeeze(0)


class ToyDenoiser:
    """Lazily builds one EpsNet per channel count, optionally persisted."""

    def __init__(
        self,
        model_seed: int,
        eps_scale: float = 0.05,
        weights_dir: str | Path | None = None,
        device: str = "cpu",
    ):
        self.model_seed = model_seed
        self.eps_scale = eps_scale
        self.weights_dir = Path(weights_dir) if weights_dir is not None else None
        self.device = device
        self._nets: dict[int, EpsNet] = {}

    def _weights_file(self, channels: int) -> Path | None:
        if self.weights_dir is None:
            return None
        return self.weights_dir / f"eps-seed{self.model_seed}-c{channels}.pt"

    def net_for(self, channels: int) -> EpsNet:
        net = self._nets.get(channels)
        if net is None:
            seed = _component_seed(self.model_seed, f"eps:{channels}")
            net = EpsNet(channels, seed=seed, eps_scale=self.eps_scale)
            path = self._weights_file(channels)
            if path is not None:
                if path.exists():
                    net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
                else:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    torch.save(net.state_dict(), path)
            net.to(self.device).eval()
            self._nets[channels] = net
        return net

    def predict(self, z: torch.Tensor, timestep: int, cond_vec: torch.Tensor) -> torch.Tensor:
        return self.net_for(z.shape[0])(z, timestep, cond_vec)


class GradientScorer:
    """Scores artifact-prone regions by smoothed local gradient energy."""

    def score(self, image: torch.Tensor) -> torch.Tensor:
        gx = F.pad(image[:, :, 1:] - image[:, :, :-1], (0, 1, 0, 0)).abs()
        gy = F.pad(image[:, 1:, :] - image[:, :-1, :], (0, 0, 0, 1)).abs()
        energy = (gx + gy).mean(dim=0, keepdim=True)
        smooth = F.avg_pool2d(energy.unsqueeze(0), 3, stride=1, padding=1, count_include_pad=False)
        smooth = smooth.squeeze(0).squeeze(0)
        peak = smooth.max()
        if peak <= 0:
            return torch.zeros_like(smooth)
        return smooth / peak


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    seed: int
    eps_scale: float


MODEL_REGISTRY: dict[str, ModelSpec] = {
    "toy-v1": ModelSpec("toy-v1", seed=1, eps_scale=0.05),
    "toy-v2": ModelSpec("toy-v2", seed=2, eps_scale=0.05),
}

DEFAULT_MODEL_ID = "toy-v1"


@dataclass(frozen=True)
class ModelBundle:
    spec: ModelSpec
    codec: HaarCodec
    denoiser: ToyDenoiser
    scorer: GradientScorer


def build_model(
    model_id: str,
    device: str = "cpu",
    weights_dir: str | Path | None = None,
) -> ModelBundle:
    spec = MODEL_REGISTRY.get(model_id)
    if spec is None:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ValueError(f"unknown model id {model_id!r}; known ids: {known}")
    denoiser = ToyDenoiser(
        model_seed=spec.seed,
        eps_scale=spec.eps_scale,
        weights_dir=weights_dir,
        device=device,
    )
    return ModelBundle(spec=spec, codec=HaarCodec(), denoiser=denoiser, scorer=GradientScorer())
