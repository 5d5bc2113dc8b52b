"""Experiment front end.

Subcommands: meta-train (population training, emits objective checkpoints
plus metrics), meta-test (train fresh agents with a frozen checkpointed
objective), baseline (td3 / reinforce / offpolicy_reinforce), gradcheck
(the finite-difference validation suites), and plot (SVG curves from metrics
CSVs). Configuration comes from a profile, an optional config file, and
repeatable --set section.key=value overrides, in that order. MGRL_OUT
overrides the output directory.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import checkpoint, gradcheck, plotting
from .baselines import run_offpolicy_reinforce, run_onpolicy_reinforce, run_td3
from .config import ConfigError, load_config, serialize_config
from .errors import NonFiniteError
from .meta import meta_test, meta_train
from .metrics import write_rows

log = logging.getLogger(__name__)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file over the profile")
    common.add_argument("--profile", choices=("paper", "desk"), default="paper")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("--out", metavar="DIR", help="output directory "
                        "(default: config run.out_dir; MGRL_OUT wins over both)")

    p = argparse.ArgumentParser(prog="mgrl", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("meta-train", parents=[common],
                   help="meta-learn an objective with a population of agents")
    mt = sub.add_parser("meta-test", parents=[common],
                        help="train fresh agents with a frozen objective")
    mt.add_argument("--checkpoint", required=True, metavar="PATH")
    mt.add_argument("--budget-episodes", type=int, default=None,
                    help="stop after this many episodes instead of run.budget_steps")
    sub.add_parser("baseline", parents=[common], help="run a comparison learner")
    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference validation of every gradient path")
    pl = sub.add_parser("plot", parents=[common], help="SVG curve from metrics CSVs")
    pl.add_argument("csvs", nargs="+", metavar="CSV")
    pl.add_argument("--out-svg", default="curve.svg", metavar="PATH")
    pl.add_argument("--bins", type=int, default=30)
    return p


def _out_dir(args, cfg):
    out = os.environ.get("MGRL_OUT") or args.out or cfg.run.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def cmd_meta_train(args, cfg):
    out = _out_dir(args, cfg)
    ckpt_path = os.path.join(out, "objective.ckpt")

    def save_ckpt(phase, params):
        checkpoint.save_params(ckpt_path, params)
        log.info("phase %d: checkpoint written to %s", phase, ckpt_path)

    obj, history = meta_train(cfg.meta, cfg.learner, cfg.objective,
                              width=cfg.run.width, layers=cfg.run.layers,
                              checkpoint_fn=save_ckpt)
    checkpoint.save_params(ckpt_path, obj)
    episodes = [r for r in history if r["kind"] == "episode"]
    csv_path = os.path.join(out, "meta_train.csv")
    write_rows(csv_path, f"meta_train-seed{cfg.meta.master_seed}", "meta_train",
               episodes, deterministic=cfg.run.deterministic)
    updates = sum(1 for r in history if r["kind"] == "meta_update")
    print(f"meta-train done: {len(episodes)} episodes, {updates} objective updates, "
          f"checkpoint {ckpt_path}, metrics {csv_path}")
    return 0


def cmd_meta_test(args, cfg):
    out = _out_dir(args, cfg)
    params = checkpoint.load_params(args.checkpoint)
    csv_path = os.path.join(out, "meta_test.csv")
    for seed in cfg.run.seeds:
        rows = meta_test(params, cfg.objective, cfg.run.env, cfg.learner,
                         master_seed=seed, budget_steps=cfg.run.budget_steps,
                         budget_episodes=args.budget_episodes,
                         width=cfg.run.width, layers=cfg.run.layers,
                         capacity=cfg.meta.capacity, segment_len=cfg.meta.segment_len)
        write_rows(csv_path, f"meta_test-{cfg.run.env}-seed{seed}", "meta_test",
                   rows, deterministic=cfg.run.deterministic)
        print(f"meta-test seed {seed}: {len(rows)} episodes, "
              f"final return {rows[-1]['episode_return']:.2f}")
    print(f"metrics {csv_path}")
    return 0


def cmd_baseline(args, cfg):
    out = _out_dir(args, cfg)
    csv_path = os.path.join(out, f"baseline_{cfg.run.baseline}.csv")
    for seed in cfg.run.seeds:
        if cfg.run.baseline == "td3":
            rows = run_td3(cfg.run.env, cfg.run.budget_steps, cfg=cfg.learner,
                           master_seed=seed, width=cfg.run.width, layers=cfg.run.layers,
                           capacity=cfg.meta.capacity, segment_len=cfg.meta.segment_len)
        elif cfg.run.baseline == "reinforce":
            rows = run_onpolicy_reinforce(cfg.run.env, cfg.run.budget_steps,
                                          master_seed=seed, cfg=cfg.reinforce,
                                          width=cfg.run.width, layers=cfg.run.layers)
        else:
            rows = run_offpolicy_reinforce(cfg.run.env, cfg.run.budget_steps,
                                           master_seed=seed, lcfg=cfg.learner,
                                           rcfg=cfg.reinforce, width=cfg.run.width,
                                           layers=cfg.run.layers,
                                           capacity=cfg.meta.capacity,
                                           segment_len=cfg.meta.segment_len)
        write_rows(csv_path, f"{cfg.run.baseline}-{cfg.run.env}-seed{seed}", "baseline",
                   rows, deterministic=cfg.run.deterministic)
        returns = [r["episode_return"] for r in rows[-20:]]
        print(f"baseline {cfg.run.baseline} seed {seed}: {len(rows)} episodes, "
              f"final-20 mean return {np.mean(returns):.2f}")
    print(f"metrics {csv_path}")
    return 0


def cmd_gradcheck(args, cfg):
    results = gradcheck.run_all(log_results=False)
    for r in results:
        print(f"{r.name:<24} {'pass' if r.passed else 'FAIL'}  "
              f"max_rel_err={r.max_rel_err:.3e}  tol={r.tolerance:.0e}  ({r.seconds:.2f}s)")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def cmd_plot(args, cfg):
    out = plotting.plot_returns(args.csvs, args.out_svg, bins=args.bins)
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "meta-train": cmd_meta_train,
    "meta-test": cmd_meta_test,
    "baseline": cmd_baseline,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.profile, args.overrides)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    log.debug("effective config:\n%s", serialize_config(cfg))
    try:
        return COMMANDS[args.command](args, cfg)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"non-finite training state: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
