"""Latent corruption engine.

Injects localized synthetic artifacts into images by inverting their latent
representation, corrupting masked cells, and resampling, then packages the
(corrupted image, mask) pairs into pixel-level annotated datasets with an
IoU evaluation harness.
"""

from .comparison import ComparisonReport, Fixture, compare_corruptions
from .corruption import (
    ALL_METHODS,
    BASELINE_METHODS,
    METHOD_PROPOSED,
    CorruptionOutcome,
    CorruptionRecord,
    CorruptionSpec,
    corrupt_baseline,
    corrupt_image_latent_direct,
    corrupt_latent,
    corrupt_region,
    masked_mean_abs_change,
)
from .denoise import (
    AnalyticGaussianDenoiser,
    RemoteDenoiser,
    ZeroDenoiser,
    make_denoiser,
    predict_eps,
)
from .diffusion import InversionConfig, Trajectory, TrajectoryPoint, invert, resample
from .errors import (
    ArtifactError,
    FormatError,
    IOFailure,
    NumericDivergenceError,
    PairingError,
    ParameterError,
    RemoteError,
    RemoteProtocolError,
    RemoteTransportError,
    ShapeError,
    UsageError,
)
from .grids import (
    BinaryMask,
    LatentGrid,
    ScoreMap,
    blend,
    downsample_mask,
    threshold_scores,
)
from .gridio import (
    lat_from_bytes,
    lat_to_bytes,
    read_image_png,
    read_lat,
    read_mask_png,
    read_score_png,
    write_image_png,
    write_lat,
    write_mask_png,
)
from .metrics import EvalReport, evaluate, iou
from .pipeline import (
    AnnotatorStack,
    BuildResult,
    DatasetManifest,
    FileMaskSource,
    IdentityCodec,
    ManifestEntry,
    RemoteCodec,
    RemoteScoreMaskSource,
    binarize_labels,
    build_dataset,
    validate_manifest,
)
from .protocol import (
    MockBridgeServer,
    MockModel,
    ProtocolClient,
    parse_endpoint,
    run_conformance,
    serve_connection,
)
from .schedule import (
    NoiseSchedule,
    StepCoeffs,
    coeffs_at,
    coeffs_from_alpha_bar,
    linear_alpha_bar,
    make_linear_schedule,
)
from .seeding import derive_seed, normal_noise, rng_for

__version__ = "0.1.0"

__all__ = [
    "ALL_METHODS",
    "AnalyticGaussianDenoiser",
    "AnnotatorStack",
    "ArtifactError",
    "BASELINE_METHODS",
    "BinaryMask",
    "BuildResult",
    "ComparisonReport",
    "CorruptionOutcome",
    "CorruptionRecord",
    "CorruptionSpec",
    "DatasetManifest",
    "EvalReport",
    "FileMaskSource",
    "Fixture",
    "FormatError",
    "IOFailure",
    "IdentityCodec",
    "InversionConfig",
    "LatentGrid",
    "METHOD_PROPOSED",
    "ManifestEntry",
    "MockBridgeServer",
    "MockModel",
    "NoiseSchedule",
    "NumericDivergenceError",
    "PairingError",
    "ParameterError",
    "ProtocolClient",
    "RemoteCodec",
    "RemoteDenoiser",
    "RemoteError",
    "RemoteProtocolError",
    "RemoteScoreMaskSource",
    "RemoteTransportError",
    "ScoreMap",
    "ShapeError",
    "StepCoeffs",
    "Trajectory",
    "TrajectoryPoint",
    "UsageError",
    "ZeroDenoiser",
    "binarize_labels",
    "blend",
    "build_dataset",
    "coeffs_at",
    "coeffs_from_alpha_bar",
    "compare_corruptions",
    "corrupt_baseline",
    "corrupt_image_latent_direct",
    "corrupt_latent",
    "corrupt_region",
    "derive_seed",
    "downsample_mask",
    "evaluate",
    "invert",
    "iou",
    "lat_from_bytes",
    "lat_to_bytes",
    "linear_alpha_bar",
    "make_denoiser",
    "make_linear_schedule",
    "masked_mean_abs_change",
    "normal_noise",
    "parse_endpoint",
    "predict_eps",
    "read_image_png",
    "read_lat",
    "read_mask_png",
    "read_score_png",
    "resample",
    "rng_for",
    "run_conformance",
    "serve_connection",
    "threshold_scores",
    "validate_manifest",
    "write_image_png",
    "write_lat",
    "write_mask_png",
]
