import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from artifact import BinaryMask, PairingError, ShapeError, evaluate, iou


def _mask(rows) -> BinaryMask:
    return BinaryMask(np.array(rows, dtype=np.uint8))


def _brute_force_report(preds, gts, artifact_only=False):
    """Per-pixel python-loop oracle for dataset-level IoU."""
    inter = {0: 0, 1: 0}
    union = {0: 0, 1: 0}
    for image_id in preds:
        p, g = preds[image_id].bits, gts[image_id].bits
        for r in range(p.shape[0]):
            for c in range(p.shape[1]):
                for cls in (0, 1):
                    pv, gv = p[r, c] == cls, g[r, c] == cls
                    inter[cls] += int(pv and gv)
                    union[cls] += int(pv or gv)
    class_iou = {c: (1.0 if union[c] == 0 else inter[c] / union[c]) for c in (0, 1)}
    if artifact_only:
        return class_iou[1]
    return (class_iou[0] + class_iou[1]) / 2.0


class TestIoU:
    def test_hand_case_one_third(self):
        # pred marks {a,b}, gt marks {b,c}: intersection {b}, union {a,b,c}
        pred = _mask([[1, 1, 0, 0]])
        gt = _mask([[0, 1, 1, 0]])
        assert iou(pred, gt, 1) == pytest.approx(1.0 / 3.0)
        # background: pred {c,d}, gt {a,d} -> intersection {d}, union {a,c,d}
        assert iou(pred, gt, 0) == pytest.approx(1.0 / 3.0)

    def test_identical_masks_score_one(self, rng):
        bits = (rng.random((16, 16)) < 0.4).astype(np.uint8)
        m = BinaryMask(bits)
        assert iou(m, m, 0) == 1.0
        assert iou(m, m, 1) == 1.0

    def test_complement_masks_score_zero(self):
        m = _mask([[1, 0], [0, 1]])
        inv = _mask([[0, 1], [1, 0]])
        assert iou(m, inv, 0) == 0.0
        assert iou(m, inv, 1) == 0.0

    def test_empty_union_scores_one(self):
        zeros = BinaryMask.zeros(4, 4)
        assert iou(zeros, zeros, 1) == 1.0
        ones = BinaryMask.ones(4, 4)
        assert iou(ones, ones, 0) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            iou(BinaryMask.zeros(2, 2), BinaryMask.zeros(3, 3), 1)

    def test_bad_class_value(self):
        with pytest.raises(ShapeError):
            iou(BinaryMask.zeros(2, 2), BinaryMask.zeros(2, 2), 2)

    @given(
        bits=hnp.arrays(np.uint8, (6, 6), elements=st.integers(0, 1)),
        other=hnp.arrays(np.uint8, (6, 6), elements=st.integers(0, 1)),
    )
    def test_symmetry(self, bits, other):
        a, b = BinaryMask(bits), BinaryMask(other)
        assert iou(a, b, 1) == iou(b, a, 1)
        assert iou(a, b, 0) == iou(b, a, 0)

    def test_monotone_in_agreement(self, rng):
        # flipping one pred pixel from wrong (gt=1, pred=0) to right
        # strictly increases the artifact IoU
        gt_bits = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        gt_bits[3, 3] = 1
        pred_bits = gt_bits.copy()
        pred_bits[3, 3] = 0
        worse = iou(BinaryMask(pred_bits), BinaryMask(gt_bits), 1)
        pred_bits[3, 3] = 1
        better = iou(BinaryMask(pred_bits), BinaryMask(gt_bits), 1)
        assert better > worse


class TestEvaluate:
    def test_matches_brute_force_oracle(self, rng):
        preds, gts = {}, {}
        for i in range(50):
            preds[f"img-{i:03d}"] = BinaryMask((rng.random((32, 32)) < 0.3).astype(np.uint8))
            gts[f"img-{i:03d}"] = BinaryMask((rng.random((32, 32)) < 0.3).astype(np.uint8))
        report = evaluate(preds, gts)
        assert report.miou == _brute_force_report(preds, gts)
        only = evaluate(preds, gts, artifact_only=True)
        assert only.miou == _brute_force_report(preds, gts, artifact_only=True)

    def test_dataset_level_differs_from_per_image_mean(self):
        # image a: tiny disagreement on a big mask; image b: total miss on a
        # tiny mask.  Count accumulation weighs a's many pixels, a per-image
        # average would not.
        preds = {
            "a": _mask([[1, 1, 1, 0]]),
            "b": _mask([[0, 0, 0, 0]]),
        }
        gts = {
            "a": _mask([[1, 1, 1, 1]]),
            "b": _mask([[1, 0, 0, 0]]),
        }
        report = evaluate(preds, gts, artifact_only=True)
        # pooled: intersection 3, union 5
        assert report.miou == pytest.approx(3.0 / 5.0)
        per_image_mean = (3.0 / 4.0 + 0.0) / 2.0
        assert report.miou != pytest.approx(per_image_mean)
        # per-image numbers are still reported individually
        rows = {i: art for i, _, art in report.per_image}
        assert rows["a"] == pytest.approx(3.0 / 4.0)
        assert rows["b"] == 0.0

    def test_perfect_prediction(self, rng):
        masks = {
            f"m{i}": BinaryMask((rng.random((8, 8)) < 0.5).astype(np.uint8)) for i in range(5)
        }
        report = evaluate(masks, dict(masks))
        assert report.miou == 1.0
        assert report.class_iou == {0: 1.0, 1: 1.0}

    def test_all_empty_masks_score_one_for_artifact_class(self):
        preds = {"x": BinaryMask.zeros(4, 4)}
        gts = {"x": BinaryMask.zeros(4, 4)}
        report = evaluate(preds, gts)
        assert report.class_iou[1] == 1.0
        assert report.miou == 1.0

    def test_unpaired_ids_rejected(self):
        with pytest.raises(PairingError):
            evaluate({"a": BinaryMask.zeros(2, 2)}, {"b": BinaryMask.zeros(2, 2)})

    def test_empty_input_rejected(self):
        with pytest.raises(PairingError):
            evaluate({}, {})

    def test_shape_mismatch_names_offending_image(self):
        preds = {"bad": BinaryMask.zeros(2, 2)}
        gts = {"bad": BinaryMask.zeros(3, 3)}
        with pytest.raises(ShapeError, match="bad"):
            evaluate(preds, gts)

    def test_counts_exposed(self):
        preds = {"a": _mask([[1, 1, 0, 0]])}
        gts = {"a": _mask([[0, 1, 1, 0]])}
        report = evaluate(preds, gts)
        assert report.intersection[1] == 1
        assert report.union[1] == 3
        assert report.intersection[0] == 1
        assert report.union[0] == 3

    @settings(max_examples=25)
    @given(
        pred=hnp.arrays(np.uint8, (5, 7), elements=st.integers(0, 1)),
        gt=hnp.arrays(np.uint8, (5, 7), elements=st.integers(0, 1)),
    )
    def test_single_image_matches_iou(self, pred, gt):
        p, g = BinaryMask(pred), BinaryMask(gt)
        report = evaluate({"only": p}, {"only": g})
        assert report.class_iou[0] == iou(p, g, 0)
        assert report.class_iou[1] == iou(p, g, 1)
        assert 0.0 <= report.miou <= 1.0


class TestEvalReport:
    def _report(self):
        preds = {"a": _mask([[1, 1, 0, 0]]), "b": _mask([[0, 0, 1, 1]])}
        gts = {"a": _mask([[0, 1, 1, 0]]), "b": _mask([[0, 0, 1, 1]])}
        return evaluate(preds, gts)

    def test_json_round_trip(self):
        report = self._report()
        payload = json.loads(report.to_json())
        assert payload["miou"] == report.miou
        assert payload["class_iou"]["artifact"] == report.class_iou[1]
        assert payload["class_iou"]["background"] == report.class_iou[0]
        assert len(payload["per_image"]) == 2
        assert payload["artifact_only"] is False

    def test_text_table_rows_and_summary(self):
        text = self._report().to_text_table()
        assert "a" in text and "b" in text and "dataset" in text
        assert text.endswith(f"mIoU (mean of 2 classes): {self._report().miou * 100:.2f}%")

    def test_artifact_only_summary_label(self):
        preds = {"a": _mask([[1, 0]])}
        report = evaluate(preds, {"a": _mask([[1, 0]])}, artifact_only=True)
        assert "artifact class only" in report.to_text_table()
        assert report.miou == 1.0

    def test_save_writes_both_files(self, tmp_path):
        report = self._report()
        json_path, text_path = report.save(tmp_path / "eval")
        assert json_path.read_text().strip() == report.to_json()
        assert text_path.read_text().strip() == report.to_text_table()
