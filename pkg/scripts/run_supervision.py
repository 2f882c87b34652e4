"""Standard vs close-talk-label supervision on contaminated training data.

    python scripts/run_supervision.py --condition rev_noise --out results
"""
from _common import finish, parse, run

from revkit import bench

if __name__ == "__main__":
    cfg, out, args = parse(__doc__, experiment="supervision", condition="rev_noise")
    results = run(cfg, bench.run_supervision_experiment, args.threads)
    finish(cfg, results, out, f"supervision_{cfg.condition}",
           [("ct_lab vs standard", {"supervision": "ct_lab"}, {"supervision": "standard"})])
