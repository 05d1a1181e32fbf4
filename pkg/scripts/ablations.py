"""Gating ablations on checkpoints written by ``transfer_experiment.py``.

For every OptionGAN checkpoint in the run directory, reports:

* specialization fraction at eps = 0.1 and 1e-3 on 25k fresh novice states,
* mean run length of the argmax-option trace over a few episodes,
* mean gate per option (options with mean gate < 0.05 have dropped out),
* the mean gate vector on each expert-demo group.

    python scripts/ablations.py --run runs/transfer
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from optiongan.analysis import demo_gating_distribution, option_trace, run_lengths, specialization_fraction
from optiongan.envs import rollout_many
from optiongan.experiments import fresh_gate_rows
from optiongan.policy import make_actor
from optiongan.storage import load_checkpoint, load_demos


def report(path: Path, demos, n_states: int, n_traces: int):
    ck = load_checkpoint(path)
    env = ck.env
    gates = fresh_gate_rows(ck, env, n_states, seed=800_000 + ck.seed)
    trajs = rollout_many(env, make_actor(ck.policy, ck.gating), range(n_traces))
    runs = np.concatenate([run_lengths(option_trace(ck, tr)) for tr in trajs])
    mean_gate = gates.mean(axis=0)
    print(f"== {path.stem}")
    print(f"  specialization eps=0.1: {specialization_fraction(gates, 0.1):.4f}   "
          f"eps=1e-3: {specialization_fraction(gates, 1e-3):.4f}")
    print(f"  mean option run length: {runs.mean():.2f}")
    print(f"  mean gate: {np.round(mean_gate, 4).tolist()}  dropped out: {int(np.sum(mean_gate < 0.05))}")
    for label, row in demo_gating_distribution(ck.gating, demos).items():
        print(f"  demo group {label}: {np.round(row, 3).tolist()}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", default="runs/transfer")
    ap.add_argument("--states", type=int, default=25_000)
    ap.add_argument("--traces", type=int, default=5)
    args = ap.parse_args()
    run = Path(args.run)
    demos = load_demos(run / "demos.csv")
    paths = sorted(run.glob("optiongan*_s*.json"))
    if not paths:
        raise SystemExit(f"no OptionGAN checkpoints in {run}")
    for path in paths:
        report(path, demos, args.states, args.traces)


if __name__ == "__main__":
    main()
