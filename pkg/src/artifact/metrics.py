"""IoU/mIoU evaluation of predicted masks against ground truth.

Counts accumulate over the whole dataset per class (sum intersections and
unions, then divide) following the standard semantic-segmentation mIoU
convention; an empty union scores 1.0 so absent classes are not penalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PairingError, ShapeError
from .grids import BinaryMask

CLASS_NAMES = {0: "background", 1: "artifact"}


def _class_counts(pred: BinaryMask, gt: BinaryMask, class_value: int) -> tuple[int, int]:
    p = pred.bits == class_value
    g = gt.bits == class_value
    return int(np.logical_and(p, g).sum()), int(np.logical_or(p, g).sum())


def iou(pred: BinaryMask, gt: BinaryMask, class_value: int) -> float:
    """Intersection over union for one class; 1.0 when the class is absent
    from both masks (empty union)."""
    if class_value not in (0, 1):
        raise ShapeError(f"class_value must be 0 or 1, got {class_value}")
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    inter, union = _class_counts(pred, gt, class_value)
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class EvalReport:
    class_iou: dict[int, float]
    miou: float
    per_image: tuple[tuple[str, float, float], ...]  # (id, background IoU, artifact IoU)
    intersection: dict[int, int]
    union: dict[int, int]
    artifact_only: bool = False

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "class_iou": {CLASS_NAMES[c]: v for c, v in sorted(self.class_iou.items())},
            "intersection": {CLASS_NAMES[c]: v for c, v in sorted(self.intersection.items())},
            "union": {CLASS_NAMES[c]: v for c, v in sorted(self.union.items())},
            "artifact_only": self.artifact_only,
            "per_image": [
                {"id": i, "background_iou": b, "artifact_iou": a} for i, b, a in self.per_image
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text_table(self) -> str:
        lines = [
            f"{'id':<24} {'background':>12} {'artifact':>12}",
            "-" * 50,
        ]
        for image_id, bg, art in self.per_image:
            lines.append(f"{image_id:<24} {bg:>12.4f} {art:>12.4f}")
        lines.append("-" * 50)
        lines.append(
            f"{'dataset':<24} {self.class_iou[0]:>12.4f} {self.class_iou[1]:>12.4f}"
        )
        scope = "artifact class only" if self.artifact_only else "mean of 2 classes"
        lines.append(f"mIoU ({scope}): {self.miou * 100:.2f}%")
        return "\n".join(lines)

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        json_path = prefix.with_suffix(".json")
        text_path = prefix.with_suffix(".txt")
        json_path.write_text(self.to_json() + "\n", encoding="utf-8")
        text_path.write_text(self.to_text_table() + "\n", encoding="utf-8")
        return json_path, text_path


def evaluate(
    preds: dict[str, BinaryMask],
    gts: dict[str, BinaryMask],
    artifact_only: bool = False,
) -> EvalReport:
    """Dataset-level IoU over masks paired by id."""
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise PairingError(f"unpaired mask ids: {missing[:10]}{'...' if len(missing) > 10 else ''}")
    if not preds:
        raise PairingError("no mask pairs to evaluate")

    inter = {0: 0, 1: 0}
    union = {0: 0, 1: 0}
    per_image = []
    for image_id in sorted(preds):
        pred, gt = preds[image_id], gts[image_id]
        if pred.shape != gt.shape:
            raise ShapeError(f"{image_id}: mask shapes differ: {pred.shape} vs {gt.shape}")
        row = []
        for c in (0, 1):
            i, u = _class_counts(pred, gt, c)
            inter[c] += i
            union[c] += u
            row.append(1.0 if u == 0 else i / u)
        per_image.append((image_id, row[0], row[1]))

    class_iou = {c: (1.0 if union[c] == 0 else inter[c] / union[c]) for c in (0, 1)}
    miou = class_iou[1] if artifact_only else (class_iou[0] + class_iou[1]) / 2.0
    return EvalReport(
        class_iou=class_iou,
        miou=miou,
        per_image=tuple(per_image),
        intersection=inter,
        union=union,
        artifact_only=artifact_only,
    )
