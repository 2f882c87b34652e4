"""Context-window sweep: PER and frame accuracy per window and seed.

    python scripts/run_window_sweep.py --condition rev --out results
    python scripts/run_window_sweep.py --condition clean --windows P16-F0,P0-F16
"""
from _common import finish, parse, run

from revkit import bench

if __name__ == "__main__":
    cfg, out, args = parse(__doc__, experiment="window_sweep")
    results = run(cfg, bench.run_window_sweep, args.threads)
    first, last = cfg.windows[0], cfg.windows[-1]
    finish(cfg, results, out, f"window_sweep_{cfg.condition}",
           [(f"{first} vs {last}", {"window": first}, {"window": last})])
