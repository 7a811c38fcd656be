"""Side-by-side comparison of corruption methods over a fixture set.

Produces three views: one row per corruption method (each at its default
corruption depth), a corrupt-step sweep for the proposed method, and a
two-row ablation contrasting direct image-latent corruption against
corrupting an intermediate latent and resampling.  The headline statistic
is the pre-resample masked mean absolute change, with the unmasked change
alongside as a confinement check; when predicted masks are supplied a
dataset mIoU column is added.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .corruption import (
    METHOD_PROPOSED,
    CorruptionSpec,
    corrupt_image_latent_direct,
    corrupt_latent,
    masked_mean_abs_change,
)
from .errors import ParameterError
from .grids import BinaryMask, LatentGrid
from .metrics import evaluate
from .schedule import NoiseSchedule

METHOD_LABELS = {
    "rotate90": "Rotation",
    "blur": "Blur",
    "gaussian_replace": "Gaussian",
    "downscale8x": "Downscale",
    "proposed": "Proposed",
}
METHOD_ORDER = ("rotate90", "blur", "gaussian_replace", "downscale8x", "proposed")
SWEEP_STEPS = (45, 40, 35, 30)

ABLATION_DIRECT = "direct_image_latent"
ABLATION_INTERMEDIATE = "intermediate_resampled"


@dataclass(frozen=True)
class Fixture:
    """One comparison input: a clean latent and its corruption mask."""

    fixture_id: str
    latent: LatentGrid
    mask: BinaryMask


@dataclass(frozen=True)
class ComparisonRow:
    key: str
    label: str
    corrupt_step: int
    masked_change: float
    unmasked_change: float
    final_masked_change: float
    final_unmasked_change: float
    output_digest: str
    miou: float | None = None

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "label": self.label,
            "corrupt_step": self.corrupt_step,
            "masked_change": self.masked_change,
            "unmasked_change": self.unmasked_change,
            "final_masked_change": self.final_masked_change,
            "final_unmasked_change": self.final_unmasked_change,
            "output_digest": self.output_digest,
            "miou": self.miou,
        }


@dataclass(frozen=True)
class ComparisonReport:
    methods: tuple[ComparisonRow, ...]
    sweep: tuple[ComparisonRow, ...]
    ablation: tuple[ComparisonRow, ...]
    fixture_count: int

    def to_dict(self) -> dict:
        return {
            "fixture_count": self.fixture_count,
            "methods": [r.to_dict() for r in self.methods],
            "sweep": [r.to_dict() for r in self.sweep],
            "ablation": [r.to_dict() for r in self.ablation],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines: list[str] = []
        lines.append(f"fixtures: {self.fixture_count}")
        lines.append("")
        lines.append("Corruption methods")
        lines.extend(_format_rows("Corr. Method", self.methods))
        lines.append("")
        lines.append("Corrupt-step sweep (proposed)")
        lines.extend(_format_rows("Configuration", self.sweep))
        if self.ablation:
            lines.append("")
            lines.append("Image latent vs. intermediate latent")
            lines.extend(_format_rows("Setting", self.ablation))
        return "\n".join(lines) + "\n"

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        json_path = prefix.with_suffix(".json")
        text_path = prefix.with_suffix(".txt")
        json_path.write_text(self.to_json(), encoding="utf-8")
        text_path.write_text(self.to_text(), encoding="utf-8")
        return json_path, text_path


def _format_rows(head: str, rows: tuple[ComparisonRow, ...]) -> list[str]:
    headers = [head, "Step", "Masked", "Unmasked", "Final masked", "Final unmasked", "mIoU"]
    table = [headers]
    for r in rows:
        table.append(
            [
                r.label,
                str(r.corrupt_step),
                f"{r.masked_change:.6f}",
                f"{r.unmasked_change:.6f}",
                f"{r.final_masked_change:.6f}",
                f"{r.final_unmasked_change:.6f}",
                "-" if r.miou is None else f"{100.0 * r.miou:.2f}",
            ]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    out = []
    for idx, row in enumerate(table):
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            out.append("  ".join("-" * w for w in widths))
    return out


def _digest(grids: list[LatentGrid]) -> str:
    h = hashlib.sha256()
    for g in grids:
        h.update(g.data.tobytes())
    return h.hexdigest()[:16]


def _miou_for(
    fixtures: list[Fixture], preds: dict[str, dict[str, BinaryMask]] | None, key: str
) -> float | None:
    if not preds or key not in preds:
        return None
    gts = {f.fixture_id: f.mask for f in fixtures}
    report = evaluate(preds[key], gts)
    return report.miou


def _run_method(
    fixtures: list[Fixture],
    spec: CorruptionSpec,
    denoiser,
    sched: NoiseSchedule,
    label: str,
    miou: float | None,
) -> ComparisonRow:
    masked: list[float] = []
    unmasked: list[float] = []
    final_masked: list[float] = []
    final_unmasked: list[float] = []
    finals: list[LatentGrid] = []
    resolved_step = spec.resolve(sched.num_sample_steps).corrupt_step
    for fx in fixtures:
        outcome = corrupt_latent(fx.latent, fx.mask, spec, denoiser, sched)
        masked.append(outcome.masked_change)
        unmasked.append(outcome.unmasked_change)
        fm, fu = masked_mean_abs_change(fx.latent, outcome.final, fx.mask)
        final_masked.append(fm)
        final_unmasked.append(fu)
        finals.append(outcome.final)
    n = len(fixtures)
    return ComparisonRow(
        key=spec.method,
        label=label,
        corrupt_step=resolved_step,
        masked_change=sum(masked) / n,
        unmasked_change=sum(unmasked) / n,
        final_masked_change=sum(final_masked) / n,
        final_unmasked_change=sum(final_unmasked) / n,
        output_digest=_digest(finals),
        miou=miou,
    )


def compare_corruptions(
    fixtures: list[Fixture],
    denoiser,
    sched: NoiseSchedule,
    seed: int = 0,
    corrupt_step: int | None = None,
    preds: dict[str, dict[str, BinaryMask]] | None = None,
    sweep_steps: tuple[int, ...] = SWEEP_STEPS,
) -> ComparisonReport:
    """Run every corruption method plus the proposed-method step sweep.

    Each method uses its default corruption depth unless ``corrupt_step``
    pins all of them to one step.  ``preds`` optionally maps a method key
    (or a sweep key ``proposed@{step}``) to predicted masks per fixture id.
    """
    if not fixtures:
        raise ParameterError("comparison needs at least one fixture")
    shape = fixtures[0].latent.shape
    for fx in fixtures[1:]:
        if fx.latent.shape != shape:
            raise ParameterError(
                f"fixture {fx.fixture_id!r} shape {fx.latent.shape} differs from {shape}"
            )

    methods = []
    for key in METHOD_ORDER:
        spec = CorruptionSpec(method=key, corrupt_step=corrupt_step, seed=seed)
        methods.append(
            _run_method(fixtures, spec, denoiser, sched, METHOD_LABELS[key], _miou_for(fixtures, preds, key))
        )

    sweep = []
    for step in sweep_steps:
        spec = CorruptionSpec(method=METHOD_PROPOSED, corrupt_step=step, seed=seed)
        sweep.append(
            _run_method(
                fixtures,
                spec,
                denoiser,
                sched,
                f"Corr. ({step})",
                _miou_for(fixtures, preds, f"proposed@{step}"),
            )
        )

    ablation = _run_ablation(fixtures, denoiser, sched, seed)
    return ComparisonReport(
        methods=tuple(methods),
        sweep=tuple(sweep),
        ablation=tuple(ablation),
        fixture_count=len(fixtures),
    )


def _run_ablation(fixtures: list[Fixture], denoiser, sched: NoiseSchedule, seed: int) -> list[ComparisonRow]:
    # direct: Gaussian replacement on the clean latent, no inversion or resample
    masked: list[float] = []
    unmasked: list[float] = []
    finals: list[LatentGrid] = []
    for fx in fixtures:
        if fx.mask.is_empty():
            out = fx.latent
        else:
            out = corrupt_image_latent_direct(fx.latent, fx.mask, seed)
        m, u = masked_mean_abs_change(fx.latent, out, fx.mask)
        masked.append(m)
        unmasked.append(u)
        finals.append(out)
    n = len(fixtures)
    direct = ComparisonRow(
        key=ABLATION_DIRECT,
        label="Direct (image latent)",
        corrupt_step=sched.num_sample_steps,
        masked_change=sum(masked) / n,
        unmasked_change=sum(unmasked) / n,
        final_masked_change=sum(masked) / n,
        final_unmasked_change=sum(unmasked) / n,
        output_digest=_digest(finals),
        miou=None,
    )
    spec = CorruptionSpec(method="gaussian_replace", seed=seed)
    intermediate = _run_method(
        fixtures, spec, denoiser, sched, "Intermediate + resample", None
    )
    intermediate = ComparisonRow(
        key=ABLATION_INTERMEDIATE,
        label=intermediate.label,
        corrupt_step=intermediate.corrupt_step,
        masked_change=intermediate.masked_change,
        unmasked_change=intermediate.unmasked_change,
        final_masked_change=intermediate.final_masked_change,
        final_unmasked_change=intermediate.final_unmasked_change,
        output_digest=intermediate.output_digest,
        miou=None,
    )
    return [direct, intermediate]
