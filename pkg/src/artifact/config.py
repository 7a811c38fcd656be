"""Run configuration: INI file sections per module, overridden by CLI flags.

The resolved configuration embeds into the dataset manifest header so every
run records its full provenance.  Contradictory settings (a remote denoiser
with no endpoint, a file mask source with no directory) fail fast as usage
errors before any work starts.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .corruption import ALL_METHODS, CorruptionSpec
from .denoise import make_denoiser
from .errors import UsageError
from .pipeline import FileMaskSource, IdentityCodec, RemoteCodec, RemoteScoreMaskSource
from .schedule import NoiseSchedule, make_linear_schedule

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_SAMPLE_STEPS = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_ETA = 0.0
DEFAULT_RENOISE_ITERS = 4
DEFAULT_RENOISE_TOL = 1e-4

DENOISER_KINDS = ("zero", "analytic", "remote")
MASK_SOURCES = ("files", "remote")
CODECS = ("identity", "remote")


@dataclass(frozen=True)
class RunConfig:
    # schedule
    total_train_steps: int = DEFAULT_TRAIN_STEPS
    num_sample_steps: int = DEFAULT_SAMPLE_STEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    eta: float = DEFAULT_ETA
    # corruption
    method: str = "proposed"
    corrupt_step: int | None = None
    resample_steps: int | None = None
    # inversion
    invert_steps: int | None = None
    renoise_iters: int = DEFAULT_RENOISE_ITERS
    renoise_tol: float = DEFAULT_RENOISE_TOL
    # denoiser
    denoiser: str = "zero"
    endpoint: str | None = None
    conditioning: str = ""
    analytic_mu: float = 0.0
    analytic_scale: float = 1.0
    # masks
    mask_source: str = "files"
    mask_dir: str | None = None
    tau: float = 0.5
    # codec
    codec: str = "identity"
    # run
    seed: int = 0
    jobs: int | None = None  # None = one worker per available core
    strict: bool = False

    def validated(self) -> "RunConfig":
        if self.denoiser not in DENOISER_KINDS:
            raise UsageError(f"denoiser must be one of {DENOISER_KINDS}, got {self.denoiser!r}")
        if self.mask_source not in MASK_SOURCES:
            raise UsageError(f"mask source must be one of {MASK_SOURCES}, got {self.mask_source!r}")
        if self.codec not in CODECS:
            raise UsageError(f"codec must be one of {CODECS}, got {self.codec!r}")
        if self.method not in ALL_METHODS:
            raise UsageError(f"method must be one of {ALL_METHODS}, got {self.method!r}")
        if self.denoiser == "remote" and not self.endpoint:
            raise UsageError("remote denoiser requires --endpoint")
        if not 0.0 <= self.tau <= 1.0:
            raise UsageError(f"tau must lie in [0, 1], got {self.tau}")
        if self.jobs is not None and self.jobs < 1:
            raise UsageError(f"jobs must be >= 1, got {self.jobs}")
        if self.num_sample_steps < 1 or self.num_sample_steps > self.total_train_steps:
            raise UsageError(
                f"num_sample_steps must lie in [1, {self.total_train_steps}], "
                f"got {self.num_sample_steps}"
            )
        if self.renoise_iters < 1:
            raise UsageError(f"renoise_iters must be >= 1, got {self.renoise_iters}")
        if self.corrupt_step is not None and self.invert_steps is not None:
            if self.corrupt_step + self.invert_steps != self.num_sample_steps:
                raise UsageError(
                    f"corrupt_step={self.corrupt_step} and invert_steps={self.invert_steps} "
                    f"are contradictory: they must sum to num_sample_steps="
                    f"{self.num_sample_steps}"
                )
        return self

    # --- factories ---------------------------------------------------------

    def make_schedule(self) -> NoiseSchedule:
        return make_linear_schedule(
            self.total_train_steps,
            self.beta_start,
            self.beta_end,
            self.num_sample_steps,
            self.eta,
        )

    def make_denoiser(self):
        return make_denoiser(
            self.denoiser,
            endpoint=self.endpoint,
            conditioning=self.conditioning,
            mu=self.analytic_mu,
            scale=self.analytic_scale,
        )

    def make_corruption_spec(self) -> CorruptionSpec:
        corrupt_step = self.corrupt_step
        if corrupt_step is None and self.invert_steps is not None:
            corrupt_step = self.num_sample_steps - self.invert_steps
        return CorruptionSpec(
            method=self.method,
            corrupt_step=corrupt_step,
            resample_steps=self.resample_steps,
            seed=self.seed,
        )

    def make_mask_source(self):
        if self.mask_source == "files":
            if not self.mask_dir:
                raise UsageError("file mask source requires a mask directory")
            return FileMaskSource(self.mask_dir)
        if not self.endpoint:
            raise UsageError("remote mask source requires --endpoint")
        return RemoteScoreMaskSource(self.endpoint, self.tau)

    def make_codec(self):
        if self.codec == "identity":
            return IdentityCodec()
        if not self.endpoint:
            raise UsageError("remote codec requires --endpoint")
        return RemoteCodec(self.endpoint)

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs is not None else max(1, os.cpu_count() or 1)

    def resolved_invert_steps(self) -> int:
        if self.invert_steps is not None:
            return self.invert_steps
        spec = self.make_corruption_spec()
        return spec.resolve(self.num_sample_steps).invert_steps

    def to_header_dict(self) -> dict:
        # records everything that determines the output bytes; run-environment
        # knobs (jobs, strict) are deliberately omitted
        return {
            "config": {
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
                "denoiser": self.denoiser,
                "renoise_iters": self.renoise_iters,
                "renoise_tol": self.renoise_tol,
                "mask_source": self.mask_source,
                "tau": self.tau if self.mask_source == "remote" else None,
            }
        }


_SCHEMA = {
    "schedule": {
        "total_train_steps": int,
        "num_sample_steps": int,
        "beta_start": float,
        "beta_end": float,
        "eta": float,
    },
    "corruption": {
        "method": str,
        "corrupt_step": int,
        "resample_steps": int,
        "seed": int,
    },
    "inversion": {
        "invert_steps": int,
        "renoise_iters": int,
        "renoise_tol": float,
    },
    "denoiser": {
        "kind": str,
        "endpoint": str,
        "conditioning": str,
        "mu": float,
        "scale": float,
    },
    "masks": {
        "source": str,
        "dir": str,
        "tau": float,
    },
    "codec": {
        "kind": str,
    },
    "run": {
        "seed": int,
        "jobs": int,
        "strict": bool,
    },
}

# (section, key) -> RunConfig field where the names differ
_FIELD_MAP = {
    ("corruption", "seed"): "seed",
    ("denoiser", "kind"): "denoiser",
    ("denoiser", "mu"): "analytic_mu",
    ("denoiser", "scale"): "analytic_scale",
    ("masks", "source"): "mask_source",
    ("masks", "dir"): "mask_dir",
    ("codec", "kind"): "codec",
}


def load_config(path: str | Path) -> RunConfig:
    """Parse an INI config file into a RunConfig (no validation yet)."""
    parser = configparser.ConfigParser()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc

    updates: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise UsageError(f"{path}: unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise UsageError(f"{path}: unknown key {key!r} in section [{section}]")
            field = _FIELD_MAP.get((section, key), key)
            kind = _SCHEMA[section][key]
            try:
                if kind is bool:
                    value = parser[section].getboolean(key)
                elif kind is int:
                    value = int(raw)
                elif kind is float:
                    value = float(raw)
                else:
                    value = raw
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
            updates[field] = value
    return replace(RunConfig(), **updates)


def apply_flag_overrides(cfg: RunConfig, args) -> RunConfig:
    """Overlay parsed CLI flags (argparse namespace) onto a config."""
    updates: dict = {}
    for flag, field in (
        ("seed", "seed"),
        ("jobs", "jobs"),
        ("denoiser", "denoiser"),
        ("endpoint", "endpoint"),
        ("eta", "eta"),
        ("corrupt_step", "corrupt_step"),
        ("invert_steps", "invert_steps"),
        ("method", "method"),
        ("resample_steps", "resample_steps"),
        ("mask_dir", "mask_dir"),
        ("mask_source", "mask_source"),
        ("tau", "tau"),
        ("codec", "codec"),
        ("sample_steps", "num_sample_steps"),
        ("train_steps", "total_train_steps"),
        ("renoise_iters", "renoise_iters"),
        ("renoise_tol", "renoise_tol"),
        ("mu", "analytic_mu"),
        ("scale", "analytic_scale"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    if getattr(args, "strict", False):
        updates["strict"] = True
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def resolve_config(args) -> RunConfig:
    """File config (if given) layered under flags, then validated."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = apply_flag_overrides(cfg, args)
    return cfg.validated()
