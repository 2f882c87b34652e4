"""RBM vs close-talk pre-training, both fine-tuned with close-talk labels.

    python scripts/run_pretraining.py --condition rev --out results
"""
from _common import finish, parse, run

from revkit import bench

if __name__ == "__main__":
    cfg, out, args = parse(__doc__, experiment="pretraining", condition="rev")
    results = run(cfg, bench.run_pretraining_experiment, args.threads)
    finish(cfg, results, out, f"pretraining_{cfg.condition}",
           [("ct vs rbm", {"pretraining": "ct"}, {"pretraining": "rbm"})])
