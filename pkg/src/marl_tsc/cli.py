"""Batch entry point: ``marl-tsc {train,verify,baselines,make-mdp,show}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (EXIT_AUDIT, EXIT_INVALID, EXIT_IO, EXIT_OK, ConfigInvalid, ExperimentConfig,
                      MissingArtifact, NetworkInvalid, load_config, run_baselines, run_make_mdp,
                      run_train, run_verify)
from .mdp import state_decode
from .oracle import loads_mdp
from .qlearn import loads_qtable

RUNNERS = {"train": run_train, "verify": run_verify, "baselines": run_baselines,
           "make-mdp": run_make_mdp}


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


COMMAND_HELP = {
    "train": "run multi-agent Q-learning; write trace.csv and qtable_j*.json",
    "verify": "run the configured convergence audits; write report.csv and report.json",
    "baselines": "compare learned greedy, fixed medium and random policies",
    "make-mdp": "estimate one junction's explicit MDP from the simulator",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marl-tsc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name, help=COMMAND_HELP.get(name))
        sp.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
        sp.add_argument("--seed", type=_seed, help="override learning.seed")
        sp.add_argument("--out", type=Path, help="override output_dir")
        sp.add_argument("--quiet", action="store_true", help="suppress the summary line")
    sp = sub.add_parser("show", help="pretty-print a Q-table, MDP or manifest file")
    sp.add_argument("path", type=Path)
    sp.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return p


def _show(path: Path) -> str:
    data = json.loads(path.read_text())
    if "records" in data:
        table, head = loads_qtable(path.read_text())
        lines = [f"junction {head['junction']}: {table.values.shape[0]} states x "
                 f"{table.values.shape[1]} actions (green {head['actions']}), "
                 f"discount {head['discount']}, step {head['step_schedule']}"]
        for s in np.flatnonzero(np.any(table.values != 0, axis=1)):
            st = state_decode(int(s), head["n_lanes"], head["n_phases"])
            vals = " ".join(f"{v:10.4f}" for v in table.values[s])
            lines.append(f"  s={s:4d} occ={st.occupancies} phase={st.active_phase}  {vals}"
                         f"  greedy={int(np.argmin(table.values[s]))}")
        return "\n".join(lines)
    if "transitions" in data:
        mdp = loads_mdp(path.read_text())
        return (f"explicit MDP: {mdp.n_states} states x {mdp.n_actions} actions, discount "
                f"{mdp.discount}, cost range [{mdp.cost.min():.4f}, {mdp.cost.max():.4f}]")
    return json.dumps(data, indent=2)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "show":
            say(_show(args.path))
            return EXIT_OK
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(args.seed, None if args.out is None else str(args.out))
        man = RUNNERS[args.command](cfg)
    except ConfigInvalid as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except NetworkInvalid as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (MissingArtifact, OSError) as exc:
        print(f"io: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"show: not a JSON file ({exc})", file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg.output_dir)
    if args.command == "verify":
        for r in man.results.results:
            say(f"{r.check:18s} {r.subject:40s} value={r.value:.6g} tol={r.tolerance:.6g} "
                f"{r.verdict}")
        say(f"wrote {', '.join(man.files)} to {out}")
        return EXIT_OK if man.passed else EXIT_AUDIT
    if args.command == "baselines":
        for r in man.results:
            say(f"{r.policy:16s} {r.mean_cost:.4f} +/- {r.stderr:.4f} ({r.seeds} seeds)")
    say(f"wrote {', '.join(sorted(man.files))} to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
