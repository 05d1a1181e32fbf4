"""One-shot gravity transfer on pendulum-swing.

Trains one expert per source gravity (.5, .75, 1.25, 1.5), pools 10
demonstrations from each, then trains IRLGAN and OptionGAN (2 and 4 options)
novices at 1G over several seeds and evaluates each on 25 fresh rollouts.

    python scripts/transfer_experiment.py --out runs/transfer --seeds 0 1 2 3 4

Experts and demos are cached in the output directory, so reruns only train
the missing novices.  Writes per-run metrics CSVs, checkpoints and a
``summary.csv``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from optiongan.experiments import METHODS, TransferConfig, run_method, train_source_experts, transfer_demos
from optiongan.storage import load_checkpoint, load_demos, save_checkpoint, save_demos

log = logging.getLogger("transfer")


def prepare_demos(cfg: TransferConfig, out: Path):
    path = out / "demos.csv"
    if path.exists():
        return load_demos(path)
    experts = {}
    cached = {g: out / f"expert_g{g:.2f}.json" for g in cfg.source_gravities}
    if all(p.exists() for p in cached.values()):
        experts = {g: load_checkpoint(p) for g, p in cached.items()}
    else:
        experts = train_source_experts(cfg)
        for g, ck in experts.items():
            save_checkpoint(ck, cached[g])
    demos = transfer_demos(cfg, experts)
    save_demos(demos, path)
    return demos


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/transfer")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    ap.add_argument("--iterations", type=int, default=150, help="novice policy updates")
    ap.add_argument("--batch", type=int, default=5000)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    logging.getLogger("optiongan.trainers").setLevel(logging.WARNING)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TransferConfig(novice_iterations=args.iterations, batch_timesteps=args.batch)
    demos = prepare_demos(cfg, out)

    rows = []
    for seed in args.seeds:
        for method in args.methods:
            t0 = time.time()
            metrics = out / f"{method}_s{seed}.csv"
            metrics.unlink(missing_ok=True)
            r = run_method(cfg, demos, method, seed, metrics)
            save_checkpoint(r.checkpoint, out / f"{method}_s{seed}.json")
            log.info("%s seed %d: return %.1f +- %.1f, specialization %.3f, gates %s (%.0fs)", method, seed,
                     r.final_return, r.final_stderr, r.specialization_0p1, np.round(r.mean_gate, 3),
                     time.time() - t0)
            rows.append([method, seed, r.final_return, r.final_stderr, r.specialization_0p1,
                         r.specialization_1em3, " ".join(f"{g:.4f}" for g in r.mean_gate)])

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "final_return", "stderr", "spec_0p1", "spec_1em3", "mean_gate"])
        w.writerows(rows)
    print(f"{'method':<12} {'mean return':>12} {'over seeds':>11}")
    for method in args.methods:
        vals = [r[2] for r in rows if r[0] == method]
        print(f"{method:<12} {np.mean(vals):12.1f} {np.std(vals) / np.sqrt(len(vals)):11.1f}")


if __name__ == "__main__":
    main()
