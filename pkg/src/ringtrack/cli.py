"""Command-line driver: ``ringtrack {simgen,train,track,eval,plot}``.

Any configuration key can be overridden with a flag of the same dotted name,
for example ``--tracker.n_particles 300`` or ``--net.hidden=[32,32,16]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from . import pipeline as pl
from .config import DEFAULTS, ConfigError, load_config, parse_value
from .dataset import DatasetError
from .neuralnet import DivergenceError, ModelFormatError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _print(msg: str) -> None:
    print(msg, flush=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringtrack", description="Track a human around a robot from link-mounted lidar rings.",
                                epilog="Config keys may be overridden as --<key> VALUE, e.g. --tracker.sigma_meas 0.2.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="seed (default: config 'seed')")

    sp = sub.add_parser("simgen", help="simulate episodes and write a dataset CSV")
    common(sp)
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--ticks", type=int, default=2000)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train the position regressor")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model-out", required=True)
    sp.add_argument("--history-out", help="per-epoch CSV (default: <model-out>.history.csv)")
    sp.add_argument("--test-out", help="write the held-out test partition here")
    sp.add_argument("--epochs", type=int, help="shorthand for --train.epochs")

    sp = sub.add_parser("track", help="run the particle filter over a dataset")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--particles", type=int, help="shorthand for --tracker.n_particles")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="report RMSE of a trajectory file")
    sp.add_argument("traj")
    sp.add_argument("--json", action="store_true", help="print the report as one JSON object")

    sp = sub.add_parser("plot", help="render a trajectory file as SVG")
    sp.add_argument("traj")
    sp.add_argument("--out", required=True)
    return p


def split_overrides(extra: Sequence[str]) -> dict:
    """Turn leftover ``--a.b VALUE`` / ``--a.b=VALUE`` tokens into a config dict."""
    out: dict = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if key not in DEFAULTS:
            raise UsageError(f"unknown option --{key}")
        if not eq:
            if i + 1 >= len(extra):
                raise UsageError(f"--{key} needs a value")
            i += 1
            val = extra[i]
        out[key] = parse_value(key, val)
        i += 1
    return out


def _config(args, overrides: dict) -> dict:
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    if getattr(args, "particles", None) is not None:
        overrides["tracker.n_particles"] = args.particles
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def run(args, overrides: dict) -> int:
    cmd = args.command
    if cmd in ("eval", "plot") and overrides:
        raise UsageError(f"{cmd} takes no config overrides")
    if cmd == "simgen":
        cfg = _config(args, overrides)
        if args.episodes < 0 or args.ticks < 0:
            raise UsageError("--episodes and --ticks must be >= 0")
        data = pl.simgen(cfg, args.episodes, args.ticks, cfg["seed"], args.out, log=_print)
        _print(json.dumps({"rows": len(data), "out": args.out}))
    elif cmd == "train":
        cfg = _config(args, overrides)
        res = pl.train(args.data, cfg, args.model_out, cfg["seed"], args.history_out, args.test_out, log=_print)
        _print(json.dumps({"model": args.model_out, "test_rows": len(res.test),
                           "test_rmse": None if res.test_rmse is None else round(res.test_rmse, 6)}))
    elif cmd == "track":
        cfg = _config(args, overrides)
        traj = pl.track(args.model, args.data, cfg, cfg["tracker.n_particles"], cfg["seed"], args.out)
        _print(json.dumps({"rows": len(traj.t), "particles": cfg["tracker.n_particles"], "out": args.out}))
    elif cmd == "eval":
        rep = pl.evaluate(pl.load_trajectory(args.traj))
        if args.json:
            _print(json.dumps(rep))
        else:
            _print(f"rows            {rep['rows']}")
            _print(f"valid fraction  {rep['valid_fraction']:.4f}")
            _print(f"NN RMSE (valid) {_fmt(rep['nn_rmse'])}")
            _print(f"PF RMSE (all)   {_fmt(rep['pf_rmse'])}")
    elif cmd == "plot":
        pl.plot(args.traj, args.out)
        _print(json.dumps({"out": args.out}))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return run(args, split_overrides(extra))
    except (UsageError, ConfigError) as exc:
        print(f"ringtrack: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"ringtrack: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, ModelFormatError, ShapeError, pl.TrajectoryError, OSError, ValueError) as exc:
        print(f"ringtrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
