"""Denoiser handles: the eps(z, t, c) interface.

Three kinds exist: ``zero`` (always returns zeros), ``analytic_gaussian``
(exact posterior-mean denoiser for data drawn from an isotropic Gaussian,
used as a test oracle), and ``remote`` (round-trips the wire protocol to a
model server).  zero/analytic handles are pure and freely shareable; a
remote handle keeps one connection per thread.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .grids import LatentGrid
from .schedule import NoiseSchedule


class ZeroDenoiser:
    """Predicts eps = 0 everywhere; collapses inversion/sampling to pure scaling."""

    kind = "zero"

    def predict_eps(self, z: LatentGrid, step_index: int, sched: NoiseSchedule) -> LatentGrid:
        sched._check_position(step_index)
        return LatentGrid.zeros(*z.shape)


@dataclass(frozen=True)
class AnalyticGaussianDenoiser:
    """Exact denoiser for data distributed as N(mu, scale^2 * I) per channel.

    For z_t = sqrt(abar)*x0 + sqrt(1-abar)*eps with x0 ~ N(mu, scale^2 I),
    the posterior mean of x0 given z_t is

        m = (sqrt(abar)*scale^2*z_t + (1-abar)*mu) / (abar*scale^2 + 1-abar)

    and the implied noise estimate is eps_hat = (z_t - sqrt(abar)*m)/sqrt(1-abar).
    """

    mu: float | tuple[float, ...] = 0.0
    scale: float = 1.0
    kind = "analytic_gaussian"

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ParameterError(f"analytic denoiser scale must be > 0, got {self.scale}")

    def _mu_for(self, channels: int) -> np.ndarray:
        if isinstance(self.mu, (int, float)):
            return np.full((channels, 1, 1), float(self.mu))
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.shape != (channels,):
            raise ParameterError(f"per-channel mu has length {mu.shape[0]}, grid has {channels}")
        return mu[:, None, None]

    def predict_eps(self, z: LatentGrid, step_index: int, sched: NoiseSchedule) -> LatentGrid:
        abar = sched.alpha_bar_at(step_index)
        if abar >= 1.0:
            raise ParameterError("eps is undefined at abar = 1 (clean data)")
        mu = self._mu_for(z.channels)
        s2 = self.scale * self.scale
        root_a = math.sqrt(abar)
        denom = abar * s2 + (1.0 - abar)
        m = (root_a * s2 * z.data + (1.0 - abar) * mu) / denom
        eps = (z.data - root_a * m) / math.sqrt(1.0 - abar)
        return LatentGrid(eps.astype(np.float32))


class RemoteDenoiser:
    """Round-trips eps prediction over the wire protocol.

    Each thread gets its own connection (one request in flight per
    connection); the conditioning id is passed through opaque.
    """

    kind = "remote"

    def __init__(self, endpoint: str, conditioning: str = "", timeout: float = 120.0, retries: int = 1):
        from .protocol import parse_endpoint

        parse_endpoint(endpoint)  # fail fast on malformed addresses
        self.endpoint = endpoint
        self.conditioning = conditioning
        self.timeout = timeout
        self.retries = retries
        self._local = threading.local()

    def _client(self):
        from .protocol import ProtocolClient

        client = getattr(self._local, "client", None)
        if client is None:
            client = ProtocolClient(self.endpoint, timeout=self.timeout, retries=self.retries)
            self._local.client = client
        return client

    def predict_eps(self, z: LatentGrid, step_index: int, sched: NoiseSchedule) -> LatentGrid:
        timestep = sched.timestep_at(step_index)
        return self._client().predict_eps(z, timestep, self.conditioning)

    def close(self) -> None:
        client = getattr(self._local, "client", None)
        if client is not None:
            client.close()
            self._local.client = None


def make_denoiser(
    kind: str,
    *,
    endpoint: str | None = None,
    conditioning: str = "",
    mu: float = 0.0,
    scale: float = 1.0,
    timeout: float = 120.0,
):
    """Build a denoiser handle from configuration values."""
    if kind == "zero":
        return ZeroDenoiser()
    if kind == "analytic":
        return AnalyticGaussianDenoiser(mu=mu, scale=scale)
    if kind == "remote":
        if not endpoint:
            raise ParameterError("remote denoiser requires an endpoint")
        return RemoteDenoiser(endpoint, conditioning=conditioning, timeout=timeout)
    raise ParameterError(f"unknown denoiser kind {kind!r} (expected zero|analytic|remote)")


def predict_eps(denoiser, z: LatentGrid, step_index: int, sched: NoiseSchedule) -> LatentGrid:
    """Dispatch helper; equivalent to ``denoiser.predict_eps(...)``."""
    out = denoiser.predict_eps(z, step_index, sched)
    if out.shape != z.shape:
        raise ParameterError(f"denoiser returned shape {out.shape} for input {z.shape}")
    return out
