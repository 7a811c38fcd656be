"""End-to-end acceptance checks for the corruption engine.

Each test prints a single pass/fail line (bypassing pytest capture) so the
suite doubles as a human-readable acceptance report.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from artifact import (
    ALL_METHODS,
    AnalyticGaussianDenoiser,
    AnnotatorStack,
    BinaryMask,
    CorruptionSpec,
    FileMaskSource,
    Fixture,
    InversionConfig,
    LatentGrid,
    MockBridgeServer,
    ZeroDenoiser,
    binarize_labels,
    build_dataset,
    compare_corruptions,
    corrupt_latent,
    evaluate,
    invert,
    iou,
    make_linear_schedule,
    read_image_png,
    read_mask_png,
    resample,
    run_conformance,
    write_image_png,
    write_mask_png,
)
from artifact.cli import main


@pytest.fixture()
def criterion(capsys):
    """One visible pass/fail line per acceptance check, capture or not."""

    @contextmanager
    def announce(number: int, title: str):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"acceptance {number}: FAIL - {title}", flush=True)
            raise
        with capsys.disabled():
            print(f"acceptance {number}: PASS - {title}", flush=True)

    return announce


def _smooth_latent(seed: int, channels: int = 4, h: int = 16, w: int = 16) -> LatentGrid:
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((channels, h, w))
    data = gaussian_filter(data, sigma=(0.0, 2.0, 2.0))
    data = data / (np.abs(data).max() + 1e-9) * 0.8
    return LatentGrid(data.astype(np.float32))


def _smooth_image(seed: int) -> LatentGrid:
    return _smooth_latent(seed, channels=3)


def _box_mask(h: int, w: int, r0: int, r1: int, c0: int, c1: int) -> BinaryMask:
    bits = np.zeros((h, w), dtype=np.uint8)
    bits[r0:r1, c0:c1] = 1
    return BinaryMask(bits)


def _rel_l2(a: LatentGrid, b: LatentGrid) -> float:
    return float(np.linalg.norm(a.data - b.data) / np.linalg.norm(b.data))


def _round_trip_error(z0: LatentGrid, denoiser, sched, iters: int) -> float:
    cfg = InversionConfig(invert_steps=10, renoise_iters=iters, renoise_tol=0.0, seed=0)
    traj = invert(z0, denoiser, sched, cfg)
    back = resample(traj.final, 10, denoiser, sched, seed=0)
    return _rel_l2(back, z0)


@pytest.fixture(scope="module")
def sched():
    return make_linear_schedule(1000, 1e-4, 0.02, 50, 0.0)


def test_01_deterministic_inversion_is_an_algebraic_inverse(sched, criterion):
    with criterion(1, "resample after invert returns the latent within 1e-6 (zero denoiser)"):
        rng = np.random.default_rng(11)
        z0 = LatentGrid(rng.standard_normal((4, 16, 16)).astype(np.float32))
        started = time.monotonic()
        err = _round_trip_error(z0, ZeroDenoiser(), sched, iters=1)
        elapsed = time.monotonic() - started
        assert err < 1e-6, f"round trip relative L2 {err:.3e} >= 1e-6"
        assert elapsed < 1.0, f"took {elapsed:.2f}s, expected < 1s"


def test_02_fixed_point_refinement_tightens_the_round_trip(sched, criterion):
    with criterion(2, "4 refinement iterations beat 1 and land <= 1e-3 on 20 fixtures"):
        den = AnalyticGaussianDenoiser()
        rng = np.random.default_rng(12)
        started = time.monotonic()
        for _ in range(20):
            z0 = LatentGrid(rng.standard_normal((4, 16, 16)).astype(np.float32))
            err4 = _round_trip_error(z0, den, sched, iters=4)
            err1 = _round_trip_error(z0, den, sched, iters=1)
            assert err4 <= err1, f"iters=4 error {err4:.3e} > iters=1 error {err1:.3e}"
            assert err4 <= 1e-3, f"iters=4 error {err4:.3e} > 1e-3"
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"took {elapsed:.2f}s, expected < 30s"


def test_03_corruption_is_confined_to_the_mask(sched, tmp_path, criterion):
    with criterion(3, "untouched outside the mask pre-resample; end-to-end change is localized"):
        # bit-identical outside the mask, for every method
        z0 = _smooth_latent(13)
        mask = _box_mask(16, 16, 4, 12, 5, 13)
        outside = np.broadcast_to((mask.bits == 0)[None], z0.shape)
        den = AnalyticGaussianDenoiser()
        for method in ALL_METHODS:
            outcome = corrupt_latent(z0, mask, CorruptionSpec(method=method, seed=3), den, sched)
            assert np.array_equal(
                outcome.corrupted.data[outside], outcome.inverted.data[outside]
            ), f"{method}: cells outside the mask changed before resampling"

        # toy end-to-end: masked pixel change dominates on >= 9 of 10 images
        image_dir = tmp_path / "images"
        mask_dir = tmp_path / "masks"
        image_dir.mkdir()
        mask_dir.mkdir()
        paths = []
        for i in range(10):
            path = image_dir / f"img-{i:02d}.png"
            write_image_png(_smooth_image(40 + i), path)
            write_mask_png(_box_mask(16, 16, 4, 12, 4, 12), mask_dir / f"img-{i:02d}.png")
            paths.append(path)
        out_dir = tmp_path / "ds"
        result = build_dataset(
            paths, FileMaskSource(mask_dir), CorruptionSpec(method="proposed"),
            den, sched, out_dir, run_seed=1,
        )
        assert len(result.manifest.entries) == 10
        localized = 0
        for entry in result.manifest.entries:
            produced = read_image_png(out_dir / entry.image_path)
            source = read_image_png(image_dir / f"{entry.entry_id}.png")
            m = read_mask_png(out_dir / entry.mask_path)
            delta = np.abs(produced.data.astype(np.float64) - source.data.astype(np.float64))
            sel = np.broadcast_to(m.bits[None] != 0, delta.shape)
            if delta[sel].mean() > delta[~sel].mean():
                localized += 1
        assert localized >= 9, f"change localized on only {localized}/10 images"


def test_04_annotator_votes_binarize_by_majority(criterion):
    with criterion(4, "2-of-3 majority vote over all 8 patterns; short stacks excluded"):
        # eight cells enumerate every 3-annotator vote pattern
        a = BinaryMask(np.array([[0, 1, 0, 1, 0, 1, 0, 1]], dtype=np.uint8))
        b = BinaryMask(np.array([[0, 0, 1, 1, 0, 0, 1, 1]], dtype=np.uint8))
        c = BinaryMask(np.array([[0, 0, 0, 0, 1, 1, 1, 1]], dtype=np.uint8))
        voted = binarize_labels(AnnotatorStack((a, b, c)))
        assert voted is not None
        expected = [[0, 0, 0, 1, 0, 1, 1, 1]]  # popcount >= 2
        assert voted.bits.tolist() == expected
        assert binarize_labels(AnnotatorStack((a, b))) is None
        assert binarize_labels(AnnotatorStack((a,))) is None


def test_05_dataset_iou_matches_a_brute_force_oracle(criterion):
    with criterion(5, "evaluate equals per-pixel counting on 50 random pairs; 1.0/0.0 anchors"):
        rng = np.random.default_rng(15)
        preds, gts = {}, {}
        for i in range(50):
            preds[f"p{i:02d}"] = BinaryMask((rng.random((32, 32)) < 0.3).astype(np.uint8))
            gts[f"p{i:02d}"] = BinaryMask((rng.random((32, 32)) < 0.3).astype(np.uint8))
        inter = {0: 0, 1: 0}
        union = {0: 0, 1: 0}
        for key in preds:
            p, g = preds[key].bits, gts[key].bits
            for r in range(32):
                for col in range(32):
                    for cls in (0, 1):
                        pv, gv = p[r, col] == cls, g[r, col] == cls
                        inter[cls] += int(pv and gv)
                        union[cls] += int(pv or gv)
        oracle = (inter[0] / union[0] + inter[1] / union[1]) / 2.0
        report = evaluate(preds, gts)
        assert report.miou == oracle, f"{report.miou!r} != oracle {oracle!r}"

        m = BinaryMask((rng.random((16, 16)) < 0.5).astype(np.uint8))
        assert evaluate({"x": m}, {"x": m}).miou == 1.0
        assert iou(m, m.inverted(), 1) == 0.0
        assert iou(m, m.inverted(), 0) == 0.0


def test_06_method_table_and_step_sweep_have_the_expected_shape(sched, criterion):
    with criterion(6, "method table rows + {30,35,40,45} sweep; blur < proposed@40 < gaussian"):
        fixtures = [
            Fixture(f"fx-{i}", _smooth_latent(70 + i), _box_mask(16, 16, 4, 12, 4, 12))
            for i in range(10)
        ]
        report = compare_corruptions(fixtures, AnalyticGaussianDenoiser(), sched, seed=6)
        labels = [row.label for row in report.methods]
        for needed in ("Rotation", "Blur", "Gaussian", "Proposed"):
            assert needed in labels, f"missing method row {needed!r}"
        assert sorted(row.corrupt_step for row in report.sweep) == [30, 35, 40, 45]

        by_key = {row.key: row for row in report.methods}
        proposed_at_40 = next(row for row in report.sweep if row.corrupt_step == 40)
        blur = by_key["blur"].masked_change
        gaussian = by_key["gaussian_replace"].masked_change
        assert blur < proposed_at_40.masked_change < gaussian, (
            f"expected blur ({blur:.4f}) < proposed@40 "
            f"({proposed_at_40.masked_change:.4f}) < gaussian ({gaussian:.4f})"
        )


def test_07_dataset_builds_are_reproducible(tmp_path, capsys, criterion):
    with criterion(7, "same seed twice gives byte-identical manifests and assets"):
        image_dir = tmp_path / "images"
        mask_dir = tmp_path / "masks"
        image_dir.mkdir()
        mask_dir.mkdir()
        for i in range(5):
            write_image_png(_smooth_image(90 + i), image_dir / f"img-{i}.png")
            write_mask_png(_box_mask(16, 16, 4, 12, 4, 12), mask_dir / f"img-{i}.png")
        base = ["build-dataset", "--images", str(image_dir), "--mask-dir", str(mask_dir),
                "--denoiser", "analytic", "--seed", "21"]
        assert main(base + ["--out", str(tmp_path / "first"), "--jobs", "1"]) == 0
        assert main(base + ["--out", str(tmp_path / "second"), "--jobs", "4"]) == 0
        capsys.readouterr()
        first = tmp_path / "first"
        second = tmp_path / "second"
        rel_paths = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert rel_paths, "build produced no files"
        for rel in rel_paths:
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), (
                f"{rel} differs between identically-seeded runs"
            )


def test_08_mock_server_passes_the_protocol_vectors(criterion):
    with criterion(8, "in-process mock server answers every protocol test vector"):
        with MockBridgeServer() as server:
            results = run_conformance(server.endpoint)
        failed = [(name, detail) for name, ok, detail in results if not ok]
        assert not failed, f"conformance failures: {failed}"
        assert len(results) >= 5
