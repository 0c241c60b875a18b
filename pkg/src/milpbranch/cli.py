"""Command-line entry point: generate, solve, collect, train, eval, reward, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("milpbranch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _add_instances(p, required=True):
    p.add_argument("--instance", action="append", default=[], help="instance file (repeatable)")
    p.add_argument("--instances-dir", help="directory of .milp/.json instance files")
    p.set_defaults(_needs_instances=required)


def _add_limits(p):
    p.add_argument("--time-limit", type=_positive_float, default=3600.0, help="seconds (default 3600)")
    p.add_argument("--node-limit", type=_positive_int, default=None)
    p.add_argument("--clock", choices=("wall", "node"), default="node")


def _add_model_shape(p):
    p.add_argument("--seq-len", type=_positive_int, default=4, help="window length L")
    p.add_argument("--d", type=_positive_int, default=32, help="embedding width")
    p.add_argument("--heads", type=_positive_int, default=2, help="attention heads H")


def build_parser() -> argparse.ArgumentParser:
    from .branchers import BRANCHERS
    from .generators import PRESETS, Family

    parser = _Parser(prog="milpbranch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory (default ./out)")

    p = sub.add_parser("generate", help="write seeded random instances")
    p.add_argument("--family", required=True, choices=[f.value for f in Family])
    p.add_argument("--count", type=_positive_int, default=10)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--format", choices=("milp", "json"), default="milp")
    for name in ("rows", "cols", "items", "bids", "facilities", "customers", "nodes", "affinity"):
        p.add_argument(f"--{name}", type=_positive_int, default=None)
    p.add_argument("--density", type=_positive_float, default=None)
    common(p)

    p = sub.add_parser("solve", help="branch and bound on one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--brancher", choices=BRANCHERS, default="fsb")
    p.add_argument("--model")
    _add_limits(p)
    common(p)

    p = sub.add_parser("collect", help="record strong branching demonstrations")
    _add_instances(p)
    p.add_argument("--seq-len", type=_positive_int, default=4, help="window length L")
    _add_limits(p)
    common(p)

    p = sub.add_parser("train", help="imitation-train a policy on demonstrations")
    p.add_argument("--data", required=True)
    _add_model_shape(p)
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--concat-heads", action="store_true")
    p.add_argument("--share-weights", action="store_true")
    p.add_argument("--dropout", type=float, default=0.0)
    common(p)

    p = sub.add_parser("eval", help="benchmark branchers over instances and seeds")
    _add_instances(p)
    p.add_argument("--brancher", action="append", choices=BRANCHERS,
                   help="policy to compare (repeatable; default fsb, pb, random)")
    p.add_argument("--model")
    p.add_argument("--runs", type=_positive_int, default=5, help="seeds per cell (default 5)")
    p.add_argument("--jobs", type=_positive_int, default=1)
    _add_limits(p)
    common(p)

    p = sub.add_parser("reward", help="dual-integral reward of a saved solve report")
    p.add_argument("--report", required=True, help="report.json written by solve")
    p.add_argument("--horizon", type=_positive_float,
                   help="integration horizon T (default: the report's final clock, at least 1)")
    p.add_argument("--optimum", type=float, help="optimal objective (default: the report's incumbent)")
    common(p)

    p = sub.add_parser("ablate", help="accuracy/reward grid over L, H, d and attention options")
    _add_instances(p)
    p.add_argument("--eval-dir", help="instances for the reward column (default: the training ones)")
    p.add_argument("--seq-lens", type=_int_list, default=[1, 2, 4])
    p.add_argument("--heads-grid", type=_int_list, default=[1, 2, 3])
    p.add_argument("--d-grid", type=_int_list, default=[16, 32])
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--node-limit", type=_positive_int, default=None)
    common(p)
    return parser


def _instance_paths(args) -> list:
    paths = list(args.instance)
    if args.instances_dir:
        if not os.path.isdir(args.instances_dir):
            raise FileNotFoundError(f"no such directory: {args.instances_dir}")
        paths += [os.path.join(args.instances_dir, f) for f in sorted(os.listdir(args.instances_dir))
                  if f.endswith((".milp", ".json")) and f != "manifest.json"]
    return paths


def _load_instances(paths):
    from .milp import read_instance
    insts = [read_instance(p) for p in paths]
    if not insts:
        raise ValueError("no instances found")
    return insts


def _limits(args):
    from .bnb import Limits
    return Limits(time_limit=getattr(args, "time_limit", 3600.0), node_limit=args.node_limit)


def _load_model(path):
    from .nn.model import PolicyModel
    return PolicyModel.load(path) if path else None


def cmd_generate(args):
    from .generators import generate_batch
    from .milp import write_instance
    overrides = {k: getattr(args, k) for k in ("rows", "cols", "items", "bids", "facilities",
                                               "customers", "nodes", "affinity", "density")}
    insts = generate_batch(args.family, args.count, args.seed, preset=args.preset, **overrides)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for inst in insts:
        fname = f"{inst.name}.{args.format}"
        write_instance(inst, os.path.join(args.out, fname))
        files.append({"file": fname, "n": inst.n, "m": inst.m, "integer": inst.p})
    manifest = {"family": args.family, "preset": args.preset, "seed": args.seed, "count": args.count,
                "overrides": {k: v for k, v in overrides.items() if v is not None}, "instances": files}
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {len(files)} instances to {args.out}")


def cmd_solve(args):
    from .bnb import solve_bnb
    from .branchers import make_brancher
    from .milp import read_instance
    inst = read_instance(args.instance)
    model = _load_model(args.model)
    report = solve_bnb(inst, make_brancher(args.brancher, args.seed, model), _limits(args),
                       clock_mode=args.clock)
    doc = {"instance": inst.name, "brancher": args.brancher, "seed": args.seed, **report.to_dict()}
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    report.write_bounds_csv(os.path.join(args.out, "bounds.csv"))
    print(f"{inst.name}: {report.status.value} objective={report.objective} nodes={report.nodes_processed}")


def cmd_collect(args):
    from .imitation import collect_demonstrations, save_dataset
    insts = _load_instances(_instance_paths(args))
    ds = collect_demonstrations(insts, args.seq_len, _limits(args), args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(ds, os.path.join(args.out, "demos.jsonl"), seed=args.seed)
    print(f"{len(ds)} windows from {len(insts) - ds.skipped} instances ({ds.skipped} solved at the root)")


def cmd_train(args):
    from .imitation import TrainConfig, load_dataset, train
    ds = load_dataset(args.data)
    if not 0.0 <= args.val_fraction < 1.0:
        raise ValueError("--val-fraction must lie in [0, 1)")
    options = {"self_loops": not args.no_self_loops, "concat_heads": args.concat_heads,
               "share_weights": args.share_weights, "dropout": args.dropout}
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, L=args.seq_len,
                      d=args.d, H=args.heads, options=options, val_fraction=args.val_fraction, lr=args.lr)
    model, history = train(ds, cfg)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "model.json"))
    with open(os.path.join(args.out, "history.json"), "w") as fh:
        json.dump(history, fh, indent=2)
    last = history[-1]
    print("trained {} epochs; final train loss {:.4f}".format(len(history), last["train_loss"]))


def cmd_eval(args):
    from .harness import run_benchmark
    policies = args.brancher or ["fsb", "pb", "random"]
    model = _load_model(args.model)
    if model is None and any(p in ("tgat", "hybrid") for p in policies):
        raise UsageError("--model is required for the tgat and hybrid branchers")
    insts = _load_instances(_instance_paths(args))
    seeds = [args.seed + k for k in range(args.runs)]
    out = run_benchmark(insts, policies, _limits(args), seeds, args.clock, args.out, args.jobs, model)
    for p, row in out["summary"]["table"].items():
        print(f"{p:>8}  time {row['time_gmean']:.2f}  nodes {row['nodes_gmean']:.2f}  wins {row['wins']}"
              f"  reward {row['reward_mean']:.4g} ± {row['reward_std_pct']:.1f}%")


def cmd_reward(args):
    from .bnb import SolveReport
    from .harness import dual_integral_reward
    with open(args.report) as fh:
        report = SolveReport.from_dict(json.load(fh))
    optimum = args.optimum if args.optimum is not None else report.objective
    if not math.isfinite(optimum):
        raise ValueError("the report has no incumbent; pass --optimum")
    T = args.horizon if args.horizon is not None else max(report.final_clock, 1.0)
    reward = dual_integral_reward(report.dual_history, T, optimum)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "reward.json"), "w") as fh:
        json.dump({"report": args.report, "horizon": T, "optimum": optimum, "reward": reward}, fh, indent=2)
    print(repr(reward))


def cmd_ablate(args):
    from .ablation import ATTENTION_OPTIONS, ablation_grid, run_ablation
    from .milp import read_instance
    train_insts = _load_instances(_instance_paths(args))
    eval_insts = train_insts
    if args.eval_dir:
        eval_insts = [read_instance(os.path.join(args.eval_dir, f)) for f in sorted(os.listdir(args.eval_dir))
                      if f.endswith((".milp", ".json")) and f != "manifest.json"]
    grid = ablation_grid(args.seq_lens, args.heads_grid, args.d_grid, ATTENTION_OPTIONS,
                         option_d=max(args.d_grid))
    rows = run_ablation(train_insts, eval_insts, args.out, epochs=args.epochs, seed=args.seed,
                        limits=_limits(args), grid=grid)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'ablation.csv')}")


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "collect": cmd_collect, "train": cmd_train,
            "eval": cmd_eval, "reward": cmd_reward, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "_needs_instances", False) and not (args.instance or args.instances_dir):
            parser.error(f"{args.command}: one of --instance or --instances-dir is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"milpbranch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"milpbranch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
