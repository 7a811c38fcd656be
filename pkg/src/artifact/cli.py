"""Command-line interface.

Commands: invert, sample, corrupt, build-dataset, compare-corruptions,
evaluate, binarize-labels, validate-manifest.  Exit codes: 0 success,
1 usage/config error, 2 numeric divergence, 3 I/O or format error,
4 remote-transport failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .comparison import Fixture, compare_corruptions
from .config import resolve_config
from .corruption import ALL_METHODS, corrupt_latent
from .diffusion import InversionConfig, invert, resample
from .errors import ArtifactError, IOFailure, UsageError
from .grids import BinaryMask, downsample_mask, threshold_scores
from .gridio import (
    read_image_png,
    read_lat,
    read_mask_png,
    read_score_png,
    write_lat,
    write_mask_png,
)
from .metrics import evaluate
from .pipeline import AnnotatorStack, binarize_labels, build_dataset, DatasetManifest, validate_manifest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3
EXIT_REMOTE = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; this CLI reserves 2 for
    # numeric divergence, so remap parse failures to the usage exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="INI config file; flags override its values")
    g.add_argument("--seed", type=int, help="run seed (default 0)")
    g.add_argument("--jobs", type=int, help="worker count (default: all cores)")
    g.add_argument("--strict", action="store_true", help="promote per-item failures to run failure")
    g.add_argument("--denoiser", choices=("zero", "analytic", "remote"), help="denoiser backend")
    g.add_argument("--endpoint", help="host:port of the remote bridge")
    g.add_argument("--eta", type=float, help="sampler stochasticity (default 0)")
    g.add_argument("--corrupt-step", type=int, dest="corrupt_step", help="sample-step index to corrupt at")
    g.add_argument("--invert-steps", type=int, dest="invert_steps", help="inversion depth in sample steps")
    g.add_argument("--method", choices=ALL_METHODS, help="corruption method")
    g.add_argument("--resample-steps", type=int, dest="resample_steps", help="resampling depth")
    g.add_argument("--mask-dir", dest="mask_dir", help="directory of mask PNGs")
    g.add_argument("--mask-source", choices=("files", "remote"), dest="mask_source")
    g.add_argument("--tau", type=float, help="score threshold for remote masks")
    g.add_argument("--codec", choices=("identity", "remote"), help="image<->latent codec")
    g.add_argument("--sample-steps", type=int, dest="sample_steps", help="sampler steps S")
    g.add_argument("--train-steps", type=int, dest="train_steps", help="training timesteps T")
    g.add_argument("--renoise-iters", type=int, dest="renoise_iters")
    g.add_argument("--renoise-tol", type=float, dest="renoise_tol")
    g.add_argument("--mu", type=float, help="analytic denoiser mean")
    g.add_argument("--scale", type=float, help="analytic denoiser scale")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="artifact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invert", parents=[common], help="invert a latent up the sample-step ladder")
    p.add_argument("input", help="input .lat file (clean latent)")
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.add_argument("--save-trajectory", action="store_true", dest="save_trajectory")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("sample", parents=[common], help="resample a latent down to clean data")
    p.add_argument("input", help="input .lat file (noised latent)")
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.add_argument("--steps", type=int, help="sampler steps to run (default: inversion depth)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("corrupt", parents=[common], help="invert, corrupt in the mask, resample")
    p.add_argument("input", help="input .lat file (clean latent)")
    p.add_argument("mask", help="mask PNG at latent resolution")
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("build-dataset", parents=[common], help="corrupt an image set into a dataset")
    p.add_argument("--images", required=True, help="directory of input PNG images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("compare-corruptions", parents=[common], help="method table and step sweep")
    p.add_argument("--images", required=True, help="directory of input PNG images")
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.add_argument("--pred-dir", dest="pred_dir", help="predicted masks per method for mIoU columns")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("evaluate", parents=[common], help="mIoU of predicted masks vs ground truth")
    p.add_argument("pred_dir", help="directory of predicted mask PNGs")
    p.add_argument("gt_dir", help="directory of ground-truth mask PNGs")
    p.add_argument("--out-prefix", dest="out_prefix")
    p.add_argument("--artifact-only", action="store_true", dest="artifact_only",
                   help="report artifact-class IoU instead of the two-class mean")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("binarize-labels", parents=[common], help="majority-vote annotator maps")
    p.add_argument("stack_dir", help="one subdirectory of annotator PNGs per image")
    p.add_argument("out_dir", help="output directory for voted masks")
    p.add_argument("--min-annotators", type=int, default=3, dest="min_annotators")
    p.add_argument("--votes", type=int, default=2)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("validate-manifest", parents=[common], help="check a dataset manifest")
    p.add_argument("manifest", help="manifest.jsonl path")
    p.set_defaults(func=cmd_validate)

    return parser


# --- commands ----------------------------------------------------------------


def cmd_invert(args) -> int:
    cfg = resolve_config(args)
    sched = cfg.make_schedule()
    denoiser = cfg.make_denoiser()
    z0 = read_lat(args.input)
    icfg = InversionConfig(
        invert_steps=cfg.resolved_invert_steps(),
        renoise_iters=cfg.renoise_iters,
        renoise_tol=cfg.renoise_tol,
        seed=cfg.seed,
    )
    traj = invert(z0, denoiser, sched, icfg)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_lat(traj.final, prefix.parent / (prefix.name + ".final.lat"))
    residual_log = {
        "invert_steps": icfg.invert_steps,
        "renoise_iters": icfg.renoise_iters,
        "residuals": [list(r) for r in traj.residuals],
    }
    (prefix.parent / (prefix.name + ".residuals.json")).write_text(
        json.dumps(residual_log, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if args.save_trajectory:
        for point in traj.points:
            write_lat(point.grid, prefix.parent / (prefix.name + f".pos{point.position:+04d}.lat"))
    print(f"inverted {icfg.invert_steps} steps -> {prefix}.final.lat")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    sched = cfg.make_schedule()
    denoiser = cfg.make_denoiser()
    zt = read_lat(args.input)
    steps = args.steps if args.steps is not None else cfg.resolved_invert_steps()
    out = resample(zt, steps, denoiser, sched, seed=cfg.seed)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_lat(out, prefix.parent / (prefix.name + ".final.lat"))
    print(f"resampled {steps} steps -> {prefix}.final.lat")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = resolve_config(args)
    sched = cfg.make_schedule()
    denoiser = cfg.make_denoiser()
    z0 = read_lat(args.input)
    mask = read_mask_png(args.mask)
    if mask.shape != (z0.height, z0.width):
        mask = downsample_mask(mask, z0.height, z0.width)
    outcome = corrupt_latent(
        z0, mask, cfg.make_corruption_spec(), denoiser, sched,
        renoise_iters=cfg.renoise_iters, renoise_tol=cfg.renoise_tol,
    )
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_lat(outcome.corrupted, prefix.parent / (prefix.name + ".corrupted.lat"))
    write_lat(outcome.final, prefix.parent / (prefix.name + ".final.lat"))
    print(
        f"method={outcome.resolved.method} corrupt_step={outcome.resolved.corrupt_step} "
        f"masked_change={outcome.masked_change:.6f} unmasked_change={outcome.unmasked_change:.6f}"
    )
    return EXIT_OK


def _png_paths(directory: str | Path) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise IOFailure(f"not a directory: {root}")
    return sorted(root.glob("*.png"))


def cmd_build_dataset(args) -> int:
    cfg = resolve_config(args)
    sched = cfg.make_schedule()
    denoiser = cfg.make_denoiser()
    images = _png_paths(args.images)
    started = time.monotonic()
    result = build_dataset(
        images,
        cfg.make_mask_source(),
        cfg.make_corruption_spec(),
        denoiser,
        sched,
        args.out,
        split=args.split,
        strict=cfg.strict,
        jobs=cfg.effective_jobs(),
        run_seed=cfg.seed,
        codec=cfg.make_codec(),
        header_extra=cfg.to_header_dict(),
    )
    elapsed = time.monotonic() - started
    print(
        f"entries={len(result.manifest.entries)} failures={len(result.failures)} "
        f"wall={elapsed:.2f}s -> {result.out_dir}"
    )
    if result.changes:
        print(
            f"pixel change: masked={result.mean_masked_change():.6f} "
            f"unmasked={result.mean_unmasked_change():.6f}"
        )
    for failure in result.failures:
        print(f"failed: {failure.source_id}: {failure.error}", file=sys.stderr)
    return EXIT_OK


def _load_fixtures(image_dir: str | Path, cfg) -> list[Fixture]:
    mask_source = cfg.make_mask_source()
    codec = cfg.make_codec()
    fixtures = []
    for path in _png_paths(image_dir):
        image = read_image_png(path)
        mask = mask_source.mask_for(path.stem, image)
        latent = codec.encode(image)
        fixtures.append(
            Fixture(path.stem, latent, downsample_mask(mask, latent.height, latent.width))
        )
    return fixtures


def _load_predictions(pred_dir: str | Path) -> dict[str, dict[str, BinaryMask]]:
    preds: dict[str, dict[str, BinaryMask]] = {}
    root = Path(pred_dir)
    if not root.is_dir():
        raise IOFailure(f"not a directory: {root}")
    for method_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        masks = {p.stem: read_mask_png(p) for p in sorted(method_dir.glob("*.png"))}
        if masks:
            preds[method_dir.name] = masks
    return preds


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    sched = cfg.make_schedule()
    denoiser = cfg.make_denoiser()
    fixtures = _load_fixtures(args.images, cfg)
    preds = _load_predictions(args.pred_dir) if args.pred_dir else None
    report = compare_corruptions(
        fixtures, denoiser, sched, seed=cfg.seed, corrupt_step=cfg.corrupt_step, preds=preds
    )
    json_path, text_path = report.save(args.out_prefix)
    sys.stdout.write(report.to_text())
    print(f"saved {json_path} and {text_path}")
    return EXIT_OK


def _mask_set(directory: str | Path) -> dict[str, BinaryMask]:
    return {p.stem: read_mask_png(p) for p in _png_paths(directory)}


def cmd_evaluate(args) -> int:
    preds = _mask_set(args.pred_dir)
    gts = _mask_set(args.gt_dir)
    report = evaluate(preds, gts, artifact_only=args.artifact_only)
    if args.out_prefix:
        json_path, text_path = report.save(args.out_prefix)
        print(f"saved {json_path} and {text_path}")
    print(report.to_text_table())
    print(f"mIoU={report.miou:.6f}")
    return EXIT_OK


def cmd_binarize(args) -> int:
    stack_root = Path(args.stack_dir)
    if not stack_root.is_dir():
        raise IOFailure(f"not a directory: {stack_root}")
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    excluded = []
    written = 0
    for image_dir in sorted(p for p in stack_root.iterdir() if p.is_dir()):
        maps = []
        for path in sorted(image_dir.glob("*.png")):
            # per-annotator threshold at 0.5 admits continuous score maps
            maps.append(threshold_scores(read_score_png(path), 0.5))
        if not maps:
            excluded.append({"image_id": image_dir.name, "reason": "no annotator maps"})
            continue
        voted = binarize_labels(AnnotatorStack(tuple(maps)), args.min_annotators, args.votes)
        if voted is None:
            excluded.append(
                {
                    "image_id": image_dir.name,
                    "reason": f"fewer than {args.min_annotators} annotators ({len(maps)})",
                }
            )
            continue
        write_mask_png(voted, out_root / f"{image_dir.name}.png")
        written += 1
    (out_root / "excluded.json").write_text(
        json.dumps(excluded, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"masks={written} excluded={len(excluded)} -> {out_root}")
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = DatasetManifest.load(manifest_path)
    report = validate_manifest(manifest, manifest_path.parent)
    for violation in report.violations:
        print(f"violation: {violation}")
    if report.ok:
        print(f"ok: {len(manifest.entries)} entries")
        return EXIT_OK
    print(f"{len(report.violations)} violation(s)")
    return EXIT_USAGE


# --- entry -------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
