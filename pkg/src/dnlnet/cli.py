"""Command-line entry points: infer, benchmark, eval, analyze.

Exit codes: 0 success, 2 config error, 3 I/O or format error,
4 incomplete model. Compute runs on a single thread (BLAS pools are
pinned to one thread for the duration of the command).
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import complexity, metrics, model_io
from .config import NetworkConfig, load_config, parse_placements
from .errors import ConfigError, DnlNetError, IncompleteModelError, WeightsFormatError
from .head import bind_network, run_network
from .instrument import trace_madds

IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class RunConfig:
    command: str
    network: NetworkConfig
    weights: Path | None
    seed: int | None
    inputs: list[Path]
    out: Path | None
    gt: Path | None = None
    runs: int = 50
    warmup: int = 3
    threads: int = 1
    instrument: bool = False


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnlnet",
        description="Single-thread CPU inference and analysis for the "
        "depthwise non-local saliency network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_weights: bool = True) -> None:
        p.add_argument("--config", type=Path, help="network config file (INI)")
        p.add_argument("--split", type=int, help="override attention split count")
        p.add_argument(
            "--placements",
            type=str,
            help="override DNL placements, e.g. '3,4' or 'none'",
        )
        p.add_argument("--out", type=Path, help="output directory")
        if with_weights:
            group = p.add_mutually_exclusive_group()
            group.add_argument("--weights", type=Path, help="weights file")
            group.add_argument(
                "--seed", type=int, help="random-init seed (untrained weights)"
            )

    p_infer = sub.add_parser("infer", help="predict saliency maps")
    common(p_infer)
    p_infer.add_argument("--input", type=Path, required=True, help="image file or directory")

    p_bench = sub.add_parser("benchmark", help="single-thread timing over N inferences")
    common(p_bench)
    p_bench.add_argument("--input", type=Path, help="optional directory of benchmark images")
    p_bench.add_argument("--runs", type=int, default=50, help="timed inferences (default 50)")
    p_bench.add_argument("--warmup", type=int, default=3, help="warm-up runs (default 3)")
    p_bench.add_argument(
        "--threads", type=int, default=1, help="compute threads; must be 1"
    )

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--input", type=Path, required=True, help="prediction directory")
    p_eval.add_argument("--gt", type=Path, required=True, help="ground-truth directory")
    p_eval.add_argument("--out", type=Path, help="output directory")

    p_an = sub.add_parser("analyze", help="MAdds and parameter accounting")
    common(p_an)
    p_an.add_argument(
        "--instrument",
        action="store_true",
        help="also run an instrumented forward pass and diff it per layer",
    )
    return parser


def _resolve_network(args: argparse.Namespace) -> NetworkConfig:
    cfg = load_config(args.config) if args.config else NetworkConfig()
    if getattr(args, "placements", None) is not None:
        cfg = replace(cfg, dnl_placements=parse_placements(args.placements))
    if getattr(args, "split", None) is not None:
        cfg = replace(cfg, dnl_split=args.split)
    return cfg


def _resolve_store(cfg: NetworkConfig, args: argparse.Namespace) -> model_io.WeightStore:
    if getattr(args, "weights", None) is not None:
        store = model_io.load_weights(args.weights)
    else:
        seed = args.seed if getattr(args, "seed", None) is not None else 0
        store = model_io.random_init(cfg, seed)
    model_io.validate_store(store, cfg)
    return store


def _list_images(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise OSError(f"no {'/'.join(IMAGE_SUFFIXES)} images found in {path}")
        return files
    if not path.exists():
        raise OSError(f"input {path} does not exist")
    return [path]


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _resolve_network(args)
    store = _resolve_store(cfg, args)
    net = bind_network(cfg, store)
    images = _list_images(args.input)
    out_dir = args.out or Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in images:
        tensor = model_io.load_image(path, size=cfg.input_hw)
        saliency = run_network(model_io.normalize_image(tensor), net)
        target = out_dir / f"{path.stem}_saliency.png"
        model_io.save_map(saliency, target)
        print(f"{path} -> {target}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    if args.threads != 1:
        raise ConfigError(
            f"benchmark is defined for exactly one compute thread, got {args.threads}"
        )
    cfg = _resolve_network(args)
    store = _resolve_store(cfg, args)
    net = bind_network(cfg, store)

    runs = args.runs
    if runs < 1:
        raise ConfigError("--runs must be >= 1")
    # materialize every input up front so file I/O stays outside the timed region
    if args.input is not None:
        paths = _list_images(args.input)
        inputs = [
            model_io.normalize_image(model_io.load_image(p, size=cfg.input_hw))
            for p in paths
        ]
        inputs = [inputs[i % len(inputs)] for i in range(runs)]
    else:
        seed = args.seed if args.seed is not None else 0
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBE7C4]))
        inputs = [
            model_io.normalize_image(
                rng.uniform(0.0, 1.0, size=(3, *cfg.input_hw)).astype(np.float32)
            )
            for _ in range(runs)
        ]

    times: list[float] = []
    with threadpool_limits(limits=1):
        for i in range(args.warmup):
            run_network(inputs[i % len(inputs)], net)
        for x in inputs:
            t0 = time.perf_counter()
            run_network(x, net)
            times.append(time.perf_counter() - t0)

    lines = [
        f"runs={runs} warmup={args.warmup} input={cfg.input_hw[0]}x{cfg.input_hw[1]} "
        f"split={cfg.dnl_split} placements={','.join(map(str, cfg.dnl_placements)) or 'none'}",
        f"mean_s={statistics.mean(times):.6f}",
        f"median_s={statistics.median(times):.6f}",
        f"min_s={min(times):.6f}",
        f"total_s={sum(times):.6f}",
    ]
    lines += [f"run{i}_s={t:.6f}" for i, t in enumerate(times)]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "benchmark.txt").write_text(text)
    return 0


def _stem_key(path: Path) -> str:
    stem = path.stem
    return stem[: -len("_saliency")] if stem.endswith("_saliency") else stem


def cmd_eval(args: argparse.Namespace) -> int:
    preds = {_stem_key(p): p for p in _list_images(args.input)}
    gts = {_stem_key(p): p for p in _list_images(args.gt)}
    missing_gt = sorted(set(preds) - set(gts))
    missing_pred = sorted(set(gts) - set(preds))
    if missing_gt or missing_pred:
        raise ConfigError(
            "unmatched stems - "
            f"predictions without ground truth: {missing_gt or 'none'}; "
            f"ground truth without predictions: {missing_pred or 'none'}"
        )
    dataset = []
    for stem in sorted(preds):
        pred = model_io.load_map(preds[stem])
        gt = (model_io.load_map(gts[stem]) >= 0.5).astype(np.float64)
        dataset.append(metrics.SaliencyEval(pred=pred, gt=gt))
    report = metrics.evaluate_dataset(dataset)
    print(report.summary_text(), end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "summary.txt").write_text(report.summary_text())
        (args.out / "curve.csv").write_text(report.curve_csv())
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve_network(args)
    report = complexity.network_madds(cfg)
    params_total = complexity.count_params(cfg)
    sections = [report.to_text(), f"learnable params: {params_total:,} ({params_total/1e6:.3f}M)"]

    exit_code = 0
    if args.instrument:
        store = _resolve_store(cfg, args)
        net = bind_network(cfg, store)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed or 0, 0xA11CE]))
        image = model_io.normalize_image(
            rng.uniform(0.0, 1.0, size=(3, *cfg.input_hw)).astype(np.float32)
        )
        with threadpool_limits(limits=1):
            with trace_madds() as trace:
                run_network(image, net)
        rows = complexity.compare_reports(report, trace)
        width = max(len(name) for name, _, _ in rows)
        diff_lines = [f"{'layer':<{width}}  {'closed_form':>14}  {'instrumented':>14}  diff"]
        mismatched = 0
        for name, closed, measured in rows:
            diff = measured - closed
            mismatched += diff != 0
            diff_lines.append(
                f"{name:<{width}}  {closed:>14,}  {measured:>14,}  {diff:+d}"
            )
        diff_lines.append(
            "instrumented total agrees with closed form"
            if mismatched == 0
            else f"MISMATCH in {mismatched} layers"
        )
        sections.append("\n".join(diff_lines))
        if mismatched:
            exit_code = 1

    text = "\n\n".join(sections) + "\n"
    print(text, end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "analysis.txt").write_text(text)
        (args.out / "analysis.tsv").write_text(report.to_tsv())
    return exit_code


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "infer": cmd_infer,
        "benchmark": cmd_benchmark,
        "eval": cmd_eval,
        "analyze": cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (WeightsFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except IncompleteModelError as exc:
        print(f"incomplete model: {exc}", file=sys.stderr)
        return 4
    except DnlNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
