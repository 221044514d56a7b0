"""Command-line surface: learn-and-apply, fixture generation, evaluation.

Exit codes: 0 success, 1 validation/processing failure (message names the
offending field), 2 usage errors (argparse). Every run prints its fully
resolved configuration so results are reproducible from the log alone.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics, presets
from .imgio import load_image, save_image
from .inference import apply_model
from .model import (
    ModelConfig,
    bias_count,
    init_model,
    load_model,
    mac_count,
    param_count,
    save_model,
)
from .sampler import ReferencePair
from .trainer import TrainConfig, train


def _print_config(title: str, values: dict) -> None:
    print(f"[{title}]")
    for key, val in values.items():
        print(f"  {key} = {val}")


def _fmt_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        window_n=args.window,
        use_context=not args.no_context,
        use_residual=not args.no_residual,
        fourier_features=args.fourier,
    ).validate()


def _train_config_from_args(args) -> TrainConfig:
    return TrainConfig(
        iterations=args.iters,
        batch=args.samples,
        window=args.window,
        seed=args.seed,
    ).validate()


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--window", type=int, default=13)
    p.add_argument("--samples", type=int, default=484)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-context", action="store_true")
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--fourier", action="store_true")


def _load_pair(before_path: str, after_path: str) -> ReferencePair:
    return ReferencePair(before=load_image(before_path), after=load_image(after_path))


def _cmd_apply(args) -> int:
    model_cfg = _model_config_from_args(args)
    train_cfg = _train_config_from_args(args)
    _print_config(
        "apply",
        {
            **{f: getattr(model_cfg, f) for f in model_cfg.__dataclass_fields__},
            **{f: getattr(train_cfg, f) for f in train_cfg.__dataclass_fields__},
            "before": args.before,
            "after": args.after,
            "input": args.input,
            "output": args.output,
            "refs": args.refs,
            "model": args.model,
            "save_model": args.save_model,
        },
    )
    train_seconds = 0.0
    final_loss = float("nan")
    if args.model:
        params = load_model(args.model)
    else:
        if not args.before or not args.after:
            raise ValueError("apply needs --before and --after (or --model)")
        pairs = [_load_pair(args.before, args.after)]
        for ref in args.refs:
            if "," not in ref:
                raise ValueError(f"--refs expects BEFORE,AFTER paths, got {ref!r}")
            bp, ap = ref.split(",", 1)
            pairs.append(_load_pair(bp, ap))
        t0 = time.perf_counter()
        params, trace = train(pairs, model_cfg, train_cfg)
        train_seconds = time.perf_counter() - t0
        final_loss = trace[-1]
    if args.save_model:
        save_model(params, args.save_model)
    input_image = load_image(args.input)
    t0 = time.perf_counter()
    output = apply_model(params, input_image, tile=args.tile)
    infer_seconds = time.perf_counter() - t0
    save_image(output, args.output)
    print(f"final_loss = {final_loss:.6g}")
    print(f"train_seconds = {train_seconds:.3f}")
    print(f"infer_seconds = {infer_seconds:.3f}")
    print(f"psnr_vs_input = {_fmt_db(metrics.psnr(output, input_image))}")
    return 0


def _discover_fixture_dir(spec_dir: Path):
    befores = sorted(spec_dir.glob("*_before.png"))
    pairs = []
    for bp in befores:
        ap = bp.with_name(bp.name.replace("_before", "_after"))
        if not ap.exists():
            raise ValueError(f"fixture {bp} has no matching after image")
        pairs.append(ReferencePair(before=load_image(bp), after=load_image(ap)))
    return pairs


def _cmd_eval(args) -> int:
    fixtures = Path(args.fixtures)
    spec_dirs = sorted(d for d in fixtures.iterdir() if d.is_dir())
    if not spec_dirs:
        raise ValueError(f"no fixture subdirectories under {fixtures}")
    model_cfg = _model_config_from_args(args)
    base_train = _train_config_from_args(args)
    _print_config(
        "eval",
        {
            **{f: getattr(model_cfg, f) for f in model_cfg.__dataclass_fields__},
            **{f: getattr(base_train, f) for f in base_train.__dataclass_fields__},
            "fixtures": args.fixtures,
            "report": args.report,
            "auto_ref": args.auto_ref,
            "timings": not args.no_timings,
        },
    )
    rows = []
    for spec_index, spec_dir in enumerate(spec_dirs):
        spec_id = spec_dir.name
        pairs = _discover_fixture_dir(spec_dir)
        if len(pairs) < 2:
            raise ValueError(f"spec {spec_id} needs >= 2 fixture pairs")
        train_cfg = TrainConfig(
            **{
                **{f: getattr(base_train, f) for f in base_train.__dataclass_fields__},
                "seed": base_train.seed + spec_index,
            }
        )
        trained: dict[int, tuple] = {}

        def _train_with(ref_idx: int):
            if ref_idx not in trained:
                t0 = time.perf_counter()
                params, _ = train([pairs[ref_idx]], model_cfg, train_cfg)
                trained[ref_idx] = (params, time.perf_counter() - t0)
            return trained[ref_idx]

        for image_id in range(1, len(pairs)):
            held = pairs[image_id]
            if args.auto_ref:
                candidates = [pairs[i] for i in range(len(pairs)) if i != image_id]
                cand_indices = [i for i in range(len(pairs)) if i != image_id]
                ref_idx = cand_indices[metrics.select_reference(held.before, candidates)]
            else:
                ref_idx = 0
            params, train_seconds = _train_with(ref_idx)
            t0 = time.perf_counter()
            output = apply_model(params, held.before)
            infer_seconds = time.perf_counter() - t0
            rows.append(
                {
                    "spec_id": spec_id,
                    "image_id": f"{image_id:03d}",
                    "psnr": metrics.psnr(output, held.after),
                    "ssim": metrics.ssim(output, held.after),
                    "train_seconds": train_seconds,
                    "infer_seconds": infer_seconds,
                }
            )

    def _fmt_time(v: float) -> str:
        return "0.000" if args.no_timings else f"{v:.3f}"

    with open(args.report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec_id", "image_id", "psnr", "ssim", "train_seconds", "infer_seconds"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["spec_id"],
                    row["image_id"],
                    _fmt_db(row["psnr"]),
                    f"{row['ssim']:.6f}",
                    _fmt_time(row["train_seconds"]),
                    _fmt_time(row["infer_seconds"]),
                ]
            )
        mean_psnr = float(np.mean([r["psnr"] for r in rows]))
        writer.writerow(
            [
                "mean",
                "",
                _fmt_db(mean_psnr),
                f"{float(np.mean([r['ssim'] for r in rows])):.6f}",
                _fmt_time(float(np.mean([r["train_seconds"] for r in rows]))),
                _fmt_time(float(np.mean([r["infer_seconds"] for r in rows]))),
            ]
        )
    print(f"wrote {len(rows)} result rows + mean row to {args.report}")
    return 0


def _cmd_gen(args) -> int:
    _print_config(
        "gen",
        {"spec": args.spec, "inputs": args.inputs, "out": args.out, "seed": args.seed},
    )
    input_dir = Path(args.inputs)
    image_paths = sorted(
        p for p in input_dir.iterdir() if p.suffix.lower() in (".png", ".ppm")
    )
    if len(image_paths) < 2:
        raise ValueError(f"need >= 2 source images in {input_dir}, found {len(image_paths)}")
    sources = [load_image(p) for p in image_paths]
    specs = []
    for spec_path in args.spec:
        text = Path(spec_path).read_text()
        specs.append((Path(spec_path).stem, presets.parse_preset(text)))
    fixtures = presets.make_fixture_set(sources, specs, seed=args.seed)
    out_root = Path(args.out)
    for fx in fixtures:
        spec_dir = out_root / fx.spec_id
        spec_dir.mkdir(parents=True, exist_ok=True)
        save_image(fx.before, spec_dir / f"{fx.image_id:03d}_before.png")
        save_image(fx.after, spec_dir / f"{fx.image_id:03d}_after.png")
    for spec_id, spec in specs:
        (out_root / spec_id / "spec.txt").write_text(presets.serialize_preset(spec))
    print(f"wrote {len(fixtures)} fixture pairs to {out_root}")
    return 0


def _cmd_select_ref(args) -> int:
    _print_config("select-ref", {"input": args.input, "candidates": args.candidates})
    input_image = load_image(args.input)
    cand_dir = Path(args.candidates)
    befores = sorted(cand_dir.glob("*_before.png"))
    if not befores:
        raise ValueError(f"no *_before.png candidates in {cand_dir}")
    pairs = []
    for bp in befores:
        ap = bp.with_name(bp.name.replace("_before", "_after"))
        if not ap.exists():
            raise ValueError(f"candidate {bp} has no matching after image")
        pairs.append(ReferencePair(before=load_image(bp), after=load_image(ap)))
    idx = metrics.select_reference(input_image, pairs)
    dist = metrics.hist_distance(
        metrics.color_hist3d(input_image), metrics.color_hist3d(pairs[idx].before)
    )
    print(f"reference = {befores[idx]}")
    print(f"distance = {dist:.6f}")
    return 0


def _cmd_bench(args) -> int:
    try:
        w_str, h_str = args.size.lower().split("x")
        width, height = int(w_str), int(h_str)
    except ValueError:
        raise ValueError(f"--size expects WxH, got {args.size!r}") from None
    _print_config(
        "bench",
        {"size": f"{width}x{height}", "repeat": args.repeat, "model": args.model,
         "tile": args.tile},
    )
    if args.model:
        params = load_model(args.model)
    else:
        params = init_model(ModelConfig(), seed=0)
    image = presets.synthetic_source_images(1, height, width, seed=0)[0]
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        apply_model(params, image, tile=args.tile)
        times.append(time.perf_counter() - t0)
    macs = mac_count(params.config, height, width)
    print(f"mean_ms = {np.mean(times) * 1000:.2f}")
    print(f"min_ms = {np.min(times) * 1000:.2f}")
    print(f"macs = {macs}")
    print(f"macs_g = {macs / 1e9:.4f}")
    print(
        f"params = {param_count(params.config)} "
        f"(biases {bias_count(params.config)})"
    )
    return 0


def _cmd_make_sources(args) -> int:
    try:
        w_str, h_str = args.size.lower().split("x")
        width, height = int(w_str), int(h_str)
    except ValueError:
        raise ValueError(f"--size expects WxH, got {args.size!r}") from None
    _print_config(
        "make-sources",
        {"out": args.out, "count": args.count, "size": f"{width}x{height}", "seed": args.seed},
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(
        presets.synthetic_source_images(args.count, height, width, seed=args.seed)
    ):
        save_image(img, out_dir / f"source_{i:03d}.png")
    print(f"wrote {args.count} source images to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="editfit",
        description="Learn a photo edit from a before/after pair and apply it to new images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("apply", help="train on a reference pair and retouch an input image")
    p.add_argument("--before")
    p.add_argument("--after")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--refs", action="append", default=[], metavar="BEFORE,AFTER",
                   help="additional reference pairs")
    p.add_argument("--save-model")
    p.add_argument("--model", help="load a trained model instead of training")
    p.add_argument("--tile", type=int, default=256)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_apply)

    p = sub.add_parser("eval", help="train/evaluate over a fixture directory, write CSV")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--auto-ref", action="store_true",
                   help="pick each input's reference by color-histogram match")
    p.add_argument("--no-timings", action="store_true",
                   help="write zeros in the timing columns (byte-reproducible CSV)")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen", help="render preset specs over source images into fixtures")
    p.add_argument("--spec", action="append", required=True,
                   help="preset spec file (repeatable)")
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("select-ref", help="pick the best-matching reference pair")
    p.add_argument("--input", required=True)
    p.add_argument("--candidates", required=True)
    p.set_defaults(func=_cmd_select_ref)

    p = sub.add_parser("bench", help="time full-image inference on a synthetic image")
    p.add_argument("--size", required=True, metavar="WxH")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--model")
    p.add_argument("--tile", type=int, default=256)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("make-sources", help="write synthetic source images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--size", default="128x96", metavar="WxH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_sources)

    return parser


def run_cli(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
