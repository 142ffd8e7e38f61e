"""Command-line entry point: ``ctxrnn {gen-data,train,eval,generate,gradcheck}``.

Exit codes: 0 success, 1 runtime failure (missing file, corrupt dataset,
non-finite loss, failed gradient check), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .config import ConfigError, resolve
from .data import DatasetFormatError
from .gradcheck import run_all

log = logging.getLogger("ctxrnn")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_config_flags(p: argparse.ArgumentParser, task_required: bool = False):
    p.add_argument("--task", choices=("art", "lcd"), required=task_required)
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. train.epochs=5 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxrnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write train/valid dataset files")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model and write metrics + checkpoint")
    _add_config_flags(p)
    p.add_argument("--init", help="shortcut for --set init.strategy=...")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="valid")
    p.add_argument("--out", type=Path, help="directory for eval.jsonl (default: next to checkpoint)")

    p = sub.add_parser("generate", help="sample free-running LCD trajectories")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--period", type=float, required=True)
    p.add_argument("--n-samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and cell")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args):
    overrides = list(args.overrides)
    if getattr(args, "init", None):
        overrides.append(f"init.strategy={args.init}")
    return resolve(args.task, args.config, overrides, args.seed)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    datasets = experiment.generate_datasets(cfg)
    paths = experiment.save_datasets(cfg.task, datasets, args.out)
    cfg.save(args.out / "config.ini")
    for p in paths:
        print(p)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    experiment.train(cfg, args.out)
    print(args.out / "metrics.jsonl")
    return 0


def cmd_eval(args) -> int:
    est, cfg = experiment.load_checkpoint(args.checkpoint)
    dataset = experiment.load_dataset(cfg.task, args.data)
    record = experiment.evaluate(est, dataset, args.split)
    out = args.out or args.checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    if not (out / "config.ini").exists():
        cfg.save(out / "config.ini")
    line = record.to_json()
    with open(out / "eval.jsonl", "a") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def cmd_generate(args) -> int:
    est, cfg = experiment.load_checkpoint(args.checkpoint)
    if cfg.task != "lcd":
        raise ConfigError("run.task", "generate needs an lcd checkpoint")
    if args.n_samples < 1:
        raise ConfigError("n_samples", "must be >= 1")
    traj = experiment.rollout_generate(est, args.x0, args.period, args.n_samples, args.seed,
                                       length=cfg["data.t_f"])
    args.out.mkdir(parents=True, exist_ok=True)
    experiment.write_samples_csv(args.out / "samples.csv", traj)
    if not (args.out / "config.ini").exists():
        cfg.save(args.out / "config.ini")
    (args.out / "generate.json").write_text(json.dumps(
        {"checkpoint": str(args.checkpoint), "x0": args.x0, "period": args.period,
         "n_samples": args.n_samples, "seed": args.seed}, sort_keys=True) + "\n")
    print(args.out / "samples.csv")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_all(args.tolerance, args.seed)
    for r in reports:
        print(r)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_RUNTIME if failed else 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError, experiment.CheckpointError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
