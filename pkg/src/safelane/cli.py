"""Command line entry point: ``safelane train | eval | dump-qdist``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .config import AGENTS, RunConfig, load_ini
from .harness import (load_agent, make_agent, replay_qdist, run_evaluation, run_training,
                      write_eval)
from .kernels import BACKEND

log = logging.getLogger("safelane")


def _run_config(args) -> RunConfig:
    run = load_ini(args.config) if args.config else RunConfig()
    kw = {}
    if args.agent:
        kw["agent"] = args.agent
    if args.benchmark:
        kw["benchmark"] = args.benchmark
    if args.steps is not None:
        kw["total_steps"] = args.steps
    if args.out:
        kw["out_dir"] = args.out
    if kw:
        d = {k: getattr(run, k) for k in run.__dataclass_fields__}
        d.update(kw)
        run = RunConfig(**d)
    return run


def cmd_train(args) -> int:
    run = _run_config(args)
    seeds = [args.seed] if args.seed is not None else list(run.seeds)
    for seed in seeds:
        out = os.path.join(run.out_dir, f"{run.agent}_{run.benchmark}_seed{seed}")
        if not run.learned:
            summary = run_evaluation(run, make_agent(run, seed), seed=seed)
            os.makedirs(out, exist_ok=True)
            write_eval(os.path.join(out, "eval.csv"), summary, run.echo())
            print(json.dumps({"seed": seed, **summary.row()}, sort_keys=True))
            continue

        def progress(rec):
            if rec.episode % args.log_every == 0:
                log.info("seed %d step %d episode %d trailing100 %.2f", seed, rec.end_step,
                         rec.episode, rec.trailing100)

        res = run_training(run, seed, out, resume=args.resume, progress=progress)
        print(json.dumps({"seed": seed, "episodes": len(res.episodes),
                          "settling_step": res.settling_step,
                          "final_trailing100": res.episodes[-1].trailing100 if res.episodes
                          else None, "metrics": res.metrics_path,
                          "checkpoint": res.checkpoints[-1] if res.checkpoints else None},
                         sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    agent, run = load_agent(args.checkpoint)
    episodes = args.episodes if args.episodes is not None else run.eval_episodes
    summary = run_evaluation(run, agent, seed=args.seed, episodes=episodes,
                             settling=args.settling_step, trace_path=args.trace)
    if args.out:
        write_eval(args.out, summary, run.echo())
    print(json.dumps(summary.row(), sort_keys=True))
    return 0


def cmd_dump_qdist(args) -> int:
    agent, run = load_agent(args.checkpoint)
    if agent.kind != "rainbow":
        raise SystemExit("dump-qdist needs a Rainbow checkpoint")
    steps = replay_qdist(agent, run, args.scenario, args.out)
    print(json.dumps({"decisions": steps, "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safelane", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a learned agent (or evaluate a MOBIL baseline)")
    t.add_argument("--config", help="INI run configuration")
    t.add_argument("--seed", type=int, help="single seed; defaults to the config's seed list")
    t.add_argument("--agent", choices=AGENTS)
    t.add_argument("--benchmark", choices=["A", "B"])
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--settling-step", type=int, default=0,
                   help="settling step copied from the training record")
    e.add_argument("--out", help="per-episode CSV")
    e.add_argument("--trace", help="write the first episode's trace here")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump-qdist", help="per-decision Q distributions along a trace")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--scenario", required=True, help="trace written by eval --trace")
    d.add_argument("--out", default="qdist.csv")
    d.set_defaults(func=cmd_dump_qdist)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    log.info("kernel backend: %s", BACKEND)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
