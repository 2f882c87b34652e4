"""Shared argument handling for the experiment scripts."""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from revkit import bench


def parse(description: str, **defaults) -> tuple[bench.ExperimentConfig, Path, argparse.Namespace]:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", help="key=value config file; flags below override it")
    p.add_argument("--condition", choices=["clean", "rev", "rev_noise"])
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--windows", help="comma-separated window specs, e.g. P16-F0,P0-F16")
    p.add_argument("--out", default="results")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.config:
        cfg = replace(bench.load_config(args.config), experiment=defaults["experiment"])
    else:
        cfg = bench.ExperimentConfig(**defaults)
    if args.condition:
        cfg = replace(cfg, condition=args.condition)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if args.windows:
        cfg = replace(cfg, windows=tuple(args.windows.split(",")))
    return cfg, Path(args.out), args


def finish(cfg: bench.ExperimentConfig, results, out: Path, name: str, comparisons=()) -> None:
    out.mkdir(parents=True, exist_ok=True)
    bench.emit_report(results, "tsv", out / f"{name}.tsv")
    print(bench.emit_report(results, "markdown", out / f"{name}.md"))
    for label, a, b in comparisons:
        wins = bench.seed_wins(results, a, b)
        print(f"{label}: {wins[0]} wins / {wins[1]} losses / {wins[2]} ties (frame accuracy)")


def run(cfg, fn, threads):
    with threadpool_limits(limits=threads):
        return fn(cfg)
