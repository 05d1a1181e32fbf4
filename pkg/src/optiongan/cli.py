"""Command-line front end.

Exit codes: 0 on success, 2 on usage or configuration errors, 1 when a run
fails.  ``OPTIONGAN_LOG=quiet|info|debug`` sets verbosity (default info).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import demo_gating_distribution, option_trace, run_lengths, specialization_fraction
from .envs import EnvSpec, rollout_many
from .experiments import fresh_gate_rows
from .policy import OptionPolicy, make_actor
from .storage import (Checkpoint, ConfigError, DemoSet, FormatError, TrainConfig, build_config, load_checkpoint,
                      load_config, load_demos, metrics_to_text, save_checkpoint, save_demos)
from .rl import ValueFn
from .trainers import collect_demos, evaluate, irlgan_train, optiongan_train, sub_seed, train_expert

log = logging.getLogger("optiongan")

ENV_ALIASES = {"pendulum": "pendulum-swing", "hopper": "planar-hopper"}
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so ``main`` controls the exit code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="base seed (overrides seeds.base)")
    p.add_argument("--env", help="pendulum-swing | planar-hopper (aliases: pendulum, hopper)")
    p.add_argument("--gravity", type=float, help="gravity multiplier")


def _train_args(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int, help="timesteps per policy update")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics CSV path (appended per iteration)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="optiongan", description="Adversarial IRL with joint reward-policy options.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train-expert", help="forward RL on the true reward")
    _common(p)
    _train_args(p)

    p = sub.add_parser("collect-demos", help="roll out a checkpoint and store visited states")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--label", help="group label (default g<gravity>)")
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true", help="add a group to an existing demo file")

    for name, helptext in (("train-irlgan", "single discriminator and policy"),
                           ("train-optiongan", "reward-policy options")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _train_args(p)
        p.add_argument("--demos", required=True, nargs="+", help="demo CSV file(s)")
        if name == "train-optiongan":
            p.add_argument("--options", type=int, help="number of options")

    p = sub.add_parser("evaluate", help="mean true return over fresh rollouts")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=25)

    p = sub.add_parser("analyze", help="gating analyses of a trained checkpoint")
    _common(p)
    p.add_argument("what", choices=["specialization", "traces", "demo-gating"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demos", nargs="+", help="demo CSV file(s) for demo-gating")
    p.add_argument("--eps", type=float, nargs="+", default=[0.1, 1e-3])
    p.add_argument("--states", type=int, default=25_000, help="fresh novice states for specialization")
    p.add_argument("--n", type=int, default=3, help="episodes to trace")

    p = sub.add_parser("reduce-check", help="check 1-option OptionGAN against IRLGAN")
    _common(p)
    p.add_argument("--demos", nargs="+", help="demo CSV file(s); default: rollouts of an untrained policy")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--batch", type=int)
    return parser


# ---------------------------------------------------------------- helpers

def _settings(args) -> tuple[EnvSpec, TrainConfig]:
    env, cfg = load_config(args.config) if args.config else build_config({})
    overrides = {}
    if args.env is not None:
        name = ENV_ALIASES.get(args.env, args.env)
        overrides["env.name"] = name
    if args.gravity is not None:
        overrides["env.gravity_mult"] = args.gravity
    if args.seed is not None:
        overrides["seeds.base"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["train.iterations"] = args.iterations
    if getattr(args, "batch", None) is not None:
        overrides["train.batch_timesteps"] = args.batch
    if getattr(args, "options", None) is not None:
        overrides["options.n"] = args.options
    return build_config(overrides, env, cfg)


def _load_demo_files(paths) -> DemoSet:
    demos = DemoSet([], 0)
    for path in paths:
        demos = demos.merged(load_demos(path))
    return demos


def _train(args, fn):
    env, cfg = _settings(args)
    if args.metrics:
        Path(args.metrics).unlink(missing_ok=True)
    if fn is train_expert:
        res = fn(env, cfg, args.metrics)
    else:
        res = fn(env, _load_demo_files(args.demos), cfg, args.metrics)
    save_checkpoint(res.checkpoint, args.out)
    last = res.metrics[-1]
    print(f"final batch return {last.mean_true_return:.3f} +- {last.return_stderr:.3f}; checkpoint {args.out}")


def _checkpoint_env(args, ck: Checkpoint) -> EnvSpec:
    """Environment from the flags and config, falling back to the checkpoint's own."""
    if args.env is None and args.gravity is None and args.config is None:
        return ck.env
    env, _ = _settings(args)
    if args.env is None and args.config is None:
        env = replace(ck.env, gravity_mult=env.gravity_mult)
    return env


# ------------------------------------------------------------- subcommands

def cmd_collect_demos(args):
    ck = load_checkpoint(args.checkpoint)
    env = _checkpoint_env(args, ck)
    seed = args.seed if args.seed is not None else 0
    demos = collect_demos(ck, env, args.n, seed, args.label)
    if args.append and Path(args.out).exists():
        demos = load_demos(args.out).merged(demos)
    save_demos(demos, args.out)
    print(f"{demos.n_episodes} episodes in {len(demos.groups)} group(s) -> {args.out}")


def cmd_evaluate(args):
    ck = load_checkpoint(args.checkpoint)
    env = _checkpoint_env(args, ck)
    mean, se = evaluate(ck, env, args.n, args.seed if args.seed is not None else 0)
    print(f"{mean:.4f} ± {se:.4f}")


def cmd_analyze(args):
    ck = load_checkpoint(args.checkpoint)
    if ck.gating is None:
        raise ConfigError("checkpoint has no gating network (trained without options)")
    env = _checkpoint_env(args, ck)
    seed = args.seed if args.seed is not None else 0
    if args.what == "specialization":
        gates = fresh_gate_rows(ck, env, args.states, seed)
        for eps in args.eps:
            print(f"eps={eps:g}  fraction={specialization_fraction(gates, eps):.6f}")
        print("mean gate", " ".join(f"{g:.4f}" for g in gates.mean(axis=0)))
    elif args.what == "traces":
        for tr in rollout_many(env, make_actor(ck.policy, ck.gating), range(seed, seed + args.n)):
            trace = option_trace(ck, tr)
            print(f"seed {tr.seed}: mean run length {run_lengths(trace).mean():.2f}  "
                  + "".join(str(w) for w in trace))
    else:
        if not args.demos:
            raise ConfigError("analyze demo-gating needs --demos")
        for label, row in demo_gating_distribution(ck.gating, _load_demo_files(args.demos)).items():
            print(label, " ".join(f"{g:.4f}" for g in row))


def reduce_check(env: EnvSpec, demos: DemoSet, cfg: TrainConfig) -> tuple[str, str]:
    """Metrics text of IRLGAN and of 1-option, unregularized OptionGAN."""
    from .discriminator import RegWeights
    cfg = replace(cfg, n_options=1, reg=RegWeights.zero())
    a = metrics_to_text(irlgan_train(env, demos, cfg).metrics)
    b = metrics_to_text(optiongan_train(env, demos, cfg).metrics)
    return a, b


def cmd_reduce_check(args):
    env, cfg = _settings(args)
    if args.demos:
        demos = _load_demo_files(args.demos)
    else:
        pol = OptionPolicy.create(env.obs_dim, env.act_dim, 1, cfg.hidden, cfg.activation,
                                  seed=sub_seed(cfg.seed, 99))
        demos = collect_demos(Checkpoint(pol, ValueFn.create(env.obs_dim, cfg.hidden)), env, 4, 0, "init")
    a, b = reduce_check(env, demos, cfg)
    if a != b:
        print("reduce-check FAILED: metrics differ")
        return 1
    print(f"reduce-check ok: {cfg.iterations} iterations, byte-identical metrics")
    return 0


def main(argv=None) -> int:
    level = os.environ.get("OPTIONGAN_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(parser.format_usage().rstrip())
        handlers = {
            "train-expert": lambda a: _train(a, train_expert),
            "collect-demos": cmd_collect_demos,
            "train-irlgan": lambda a: _train(a, irlgan_train),
            "train-optiongan": lambda a: _train(a, optiongan_train),
            "evaluate": cmd_evaluate,
            "analyze": cmd_analyze,
            "reduce-check": cmd_reduce_check,
        }
        return handlers[args.command](args) or 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
