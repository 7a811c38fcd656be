"""End-to-end dataset construction: images in, (corrupted image, mask) pairs out.

Each input image gets a mask (from files or a remote scorer), is encoded to
a latent (identity codec in toy mode, remote VAE otherwise), inverted,
corrupted inside the mask, resampled, decoded, and written next to its mask
with a provenance record.  Per-image failures are collected instead of
aborting the run unless strict mode is on.  The manifest is JSON Lines with
a run-header first line; reruns with the same seed and inputs are
byte-identical.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corruption import CorruptionOutcome, CorruptionRecord, CorruptionSpec, corrupt_latent
from .errors import ArtifactError, FormatError, ParameterError, ShapeError
from .grids import BinaryMask, LatentGrid, downsample_mask, threshold_scores
from .gridio import read_image_png, read_mask_png, read_score_png, write_image_png, write_mask_png
from .schedule import NoiseSchedule
from .seeding import derive_seed

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
FAILURES_NAME = "failures.json"


@dataclass(frozen=True)
class AnnotatorStack:
    """Per-annotator binary maps for one image."""

    maps: tuple[BinaryMask, ...]

    def __post_init__(self):
        if len(self.maps) == 0:
            raise ParameterError("annotator stack must contain at least one map")
        first = self.maps[0].shape
        for m in self.maps[1:]:
            if m.shape != first:
                raise ShapeError(f"annotator map shapes differ: {first} vs {m.shape}")

    @property
    def annotator_count(self) -> int:
        return len(self.maps)


def binarize_labels(stack: AnnotatorStack, min_annotators: int = 3, votes: int = 2) -> BinaryMask | None:
    """Majority-vote binarization: None (excluded) for stacks with fewer than
    ``min_annotators`` maps, else cell = 1 iff at least ``votes`` annotators mark it."""
    if stack.annotator_count < min_annotators:
        return None
    total = sum(m.bits.astype(int) for m in stack.maps)
    return BinaryMask((total >= votes).astype("uint8"))


# --- mask sources -----------------------------------------------------------


class FileMaskSource:
    """Masks stored as <image stem>.png in a directory."""

    def __init__(self, mask_dir: str | Path):
        self.mask_dir = Path(mask_dir)

    def mask_for(self, image_id: str, image: LatentGrid) -> BinaryMask:
        path = self.mask_dir / f"{image_id}.png"
        if not path.exists():
            raise FormatError(f"no mask file for {image_id!r} at {path}")
        mask = read_mask_png(path)
        if mask.shape != (image.height, image.width):
            raise ShapeError(
                f"{image_id}: mask {mask.shape} does not match image "
                f"{(image.height, image.width)}"
            )
        return mask


class RemoteScoreMaskSource:
    """Scores images over the wire protocol and thresholds at tau."""

    def __init__(self, endpoint: str, tau: float, timeout: float = 120.0):
        if not 0.0 <= tau <= 1.0:
            raise ParameterError(f"tau must lie in [0, 1], got {tau}")
        self.endpoint = endpoint
        self.tau = tau
        self.timeout = timeout

    def mask_for(self, image_id: str, image: LatentGrid) -> BinaryMask:
        from .protocol import ProtocolClient

        with ProtocolClient(self.endpoint, timeout=self.timeout) as client:
            scores = client.score_regions(image)
        return threshold_scores(scores, self.tau)


# --- codecs -----------------------------------------------------------------


class IdentityCodec:
    """Toy mode: the pixel grid is the latent."""

    name = "identity"

    def encode(self, image: LatentGrid) -> LatentGrid:
        return image

    def decode(self, latent: LatentGrid) -> LatentGrid:
        return latent


class RemoteCodec:
    """Bridge mode: VAE encode/decode over the wire protocol."""

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def _client(self):
        from .protocol import ProtocolClient

        return ProtocolClient(self.endpoint, timeout=self.timeout)

    def encode(self, image: LatentGrid) -> LatentGrid:
        with self._client() as client:
            return client.encode_image(image)

    def decode(self, latent: LatentGrid) -> LatentGrid:
        with self._client() as client:
            return client.decode_latent(latent)


# --- manifest ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    entry_id: str
    image_path: str
    mask_path: str
    source_id: str
    split: str
    record: CorruptionRecord

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "source_id": self.source_id,
            "split": self.split,
            "record": self.record.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            entry_id=d["entry_id"],
            image_path=d["image_path"],
            mask_path=d["mask_path"],
            source_id=d["source_id"],
            split=d["split"],
            record=CorruptionRecord.from_dict(d["record"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    header: dict
    entries: tuple[ManifestEntry, ...]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        for entry in self.entries:
            lines.append(json.dumps({"type": "entry", **entry.to_dict()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read manifest {path}: {exc}") from exc
        header = None
        entries = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            kind = obj.get("type")
            if kind == "header":
                if header is not None:
                    raise FormatError(f"{path}:{lineno}: duplicate header line")
                header = {k: v for k, v in obj.items() if k != "type"}
            elif kind == "entry":
                try:
                    entries.append(ManifestEntry.from_dict(obj))
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad entry: {exc}") from exc
            else:
                raise FormatError(f"{path}:{lineno}: unknown line type {kind!r}")
        if header is None:
            raise FormatError(f"{path}: missing header line")
        return DatasetManifest(header=header, entries=tuple(entries))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_manifest(manifest: DatasetManifest, base_dir: str | Path) -> ValidationReport:
    """Check path existence, image/mask dimension agreement, and id uniqueness."""
    base = Path(base_dir)
    violations: list[str] = []
    seen: set[str] = set()
    for entry in manifest.entries:
        if entry.entry_id in seen:
            violations.append(f"duplicate entry id {entry.entry_id!r}")
        seen.add(entry.entry_id)
        if entry.split not in ("train", "test"):
            violations.append(f"{entry.entry_id}: invalid split {entry.split!r}")
        image_path = base / entry.image_path
        mask_path = base / entry.mask_path
        image = mask = None
        if not image_path.exists():
            violations.append(f"{entry.entry_id}: missing image {entry.image_path}")
        else:
            image = read_image_png(image_path)
        if not mask_path.exists():
            violations.append(f"{entry.entry_id}: missing mask {entry.mask_path}")
        else:
            mask = read_mask_png(mask_path)
        if image is not None and mask is not None:
            if mask.shape != (image.height, image.width):
                violations.append(
                    f"{entry.entry_id}: mask {mask.shape} does not match image "
                    f"{(image.height, image.width)}"
                )
    return ValidationReport(tuple(violations))


# --- build ------------------------------------------------------------------


@dataclass(frozen=True)
class BuildFailure:
    source_id: str
    error: str


@dataclass(frozen=True)
class PixelChange:
    masked: float
    unmasked: float


@dataclass(frozen=True)
class BuildResult:
    manifest: DatasetManifest
    failures: tuple[BuildFailure, ...]
    out_dir: Path
    changes: tuple[PixelChange, ...] = ()  # pixel-level change stats, aligned with entries

    def mean_masked_change(self) -> float:
        return sum(c.masked for c in self.changes) / len(self.changes) if self.changes else 0.0

    def mean_unmasked_change(self) -> float:
        return sum(c.unmasked for c in self.changes) / len(self.changes) if self.changes else 0.0


@dataclass
class _ImageResult:
    entry: ManifestEntry | None = None
    failure: BuildFailure | None = None
    outcome: CorruptionOutcome | None = None
    pixel_change: PixelChange | None = None


def _process_one(
    image_path: Path,
    mask_source,
    codec,
    spec: CorruptionSpec,
    denoiser,
    sched: NoiseSchedule,
    out_dir: Path,
    split: str,
    run_seed: int,
) -> _ImageResult:
    from .corruption import masked_mean_abs_change

    image_id = image_path.stem
    result = _ImageResult()
    try:
        image = read_image_png(image_path)
        mask = mask_source.mask_for(image_id, image)
        latent = codec.encode(image)
        latent_mask = downsample_mask(mask, latent.height, latent.width)
        seed = derive_seed(run_seed, image_id)
        per_image_spec = CorruptionSpec(
            method=spec.method,
            corrupt_step=spec.corrupt_step,
            resample_steps=spec.resample_steps,
            seed=seed,
        )
        outcome = corrupt_latent(latent, latent_mask, per_image_spec, denoiser, sched)
        output = codec.decode(outcome.final)
        if output.shape != image.shape:
            raise ShapeError(
                f"decoded image shape {output.shape} does not match input {image.shape}"
            )

        image_rel = f"images/{image_id}.png"
        mask_rel = f"masks/{image_id}.png"
        write_image_png(output, out_dir / image_rel)
        write_mask_png(mask, out_dir / mask_rel)

        masked_px, unmasked_px = masked_mean_abs_change(image, output, mask)
        record = CorruptionRecord(
            input_id=image_id,
            mask_id=image_id,
            method=outcome.resolved.method,
            corrupt_step=outcome.resolved.corrupt_step,
            invert_steps=outcome.resolved.invert_steps,
            resample_steps=outcome.resolved.resample_steps,
            seed=seed,
            output_id=image_id,
        )
        result.entry = ManifestEntry(
            entry_id=image_id,
            image_path=image_rel,
            mask_path=mask_rel,
            source_id=str(image_path),
            split=split,
            record=record,
        )
        result.outcome = outcome
        result.pixel_change = PixelChange(masked_px, unmasked_px)
    except (ArtifactError, OSError) as exc:
        result.failure = BuildFailure(source_id=str(image_path), error=f"{type(exc).__name__}: {exc}")
    return result


def build_dataset(
    images: list[str | Path],
    mask_source,
    spec: CorruptionSpec,
    denoiser,
    sched: NoiseSchedule,
    out_dir: str | Path,
    *,
    split: str = "train",
    strict: bool = False,
    jobs: int = 1,
    run_seed: int = 0,
    codec=None,
    header_extra: dict | None = None,
) -> BuildResult:
    """Run the corruption pipeline over ``images`` and package the results.

    Entries appear in input order regardless of worker scheduling, so the
    manifest is reproducible for a fixed seed.
    """
    if split not in ("train", "test"):
        raise ParameterError(f"split must be train or test, got {split!r}")
    codec = codec or IdentityCodec()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    paths = [Path(p) for p in images]

    def worker(path: Path) -> _ImageResult:
        return _process_one(path, mask_source, codec, spec, denoiser, sched, out_dir, split, run_seed)

    if jobs > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, paths))
    else:
        results = [worker(p) for p in paths]

    failures = tuple(r.failure for r in results if r.failure is not None)
    entries = tuple(r.entry for r in results if r.entry is not None)
    changes = tuple(r.pixel_change for r in results if r.pixel_change is not None)
    if strict and failures:
        details = "; ".join(f"{f.source_id}: {f.error}" for f in failures)
        raise ParameterError(f"{len(failures)} image(s) failed in strict mode: {details}")

    resolved = spec.resolve(sched.num_sample_steps)
    header = {
        "version": MANIFEST_VERSION,
        "seed": run_seed,
        "split": split,
        "codec": codec.name,
        "method": resolved.method,
        "corrupt_step": resolved.corrupt_step,
        "invert_steps": resolved.invert_steps,
        "resample_steps": resolved.resample_steps,
        "schedule": {
            "total_train_steps": sched.total_train_steps,
            "num_sample_steps": sched.num_sample_steps,
            "eta": sched.eta,
        },
        "inputs": len(paths),
        "failures": len(failures),
    }
    if header_extra:
        header.update(header_extra)
    manifest = DatasetManifest(header=header, entries=entries)
    manifest.save(out_dir / MANIFEST_NAME)
    if failures:
        failure_payload = [{"source_id": f.source_id, "error": f.error} for f in failures]
        (out_dir / FAILURES_NAME).write_text(
            json.dumps(failure_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return BuildResult(manifest=manifest, failures=failures, out_dir=out_dir, changes=changes)
