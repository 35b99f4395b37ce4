"""Command-line entry point.

Exit codes: 0 success, 1 invalid usage, config or input file, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import container
from .adapter import AdapterError
from .config import ConfigError, load_config
from .container import ContainerError
from .simulation import NamedBatch
from .workflow import BasicWorkflow, fit_comparison

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _float32(batch: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, v in batch.items():
        a = np.asarray(v)
        out[k] = a.astype(np.float32) if a.dtype.kind == "f" else a
    return out


def _read_data(path) -> NamedBatch:
    if not Path(path).is_file():
        raise FileNotFoundError(f"data file {str(path)!r} not found")
    return container.read(path)


def _workflow_from_ckpt(args) -> BasicWorkflow:
    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"checkpoint {str(args.ckpt)!r} not found")
    wf = BasicWorkflow.load(args.ckpt)
    if getattr(args, "seed", None) is not None:
        wf.config = wf.config.with_seed(args.seed)
    return wf


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_seed(args.seed) if getattr(args, "seed", None) is not None else cfg


def cmd_simulate(args) -> None:
    if args.n < 1:
        raise UsageError("--n must be positive")
    wf = BasicWorkflow(_config(args))
    container.write(args.out, _float32(wf.simulate(args.n, workers=args.workers)))


def cmd_train(args) -> None:
    cfg = _config(args)
    data = None
    if args.data is not None:
        if args.mode == "online":
            raise UsageError("--data is only used with --mode offline")
        data = _read_data(args.data)
    wf = BasicWorkflow(cfg)
    history = wf.fit(args.mode, data)
    wf.save(args.out)
    if history.loss:
        print(f"trained {len(history.loss)} epochs, final loss {history.loss[-1]:.6g}")


def cmd_sample(args) -> None:
    wf = _workflow_from_ckpt(args)
    draws = wf.sample(_read_data(args.data), args.num_samples)
    container.write(args.out, _float32(draws))


def cmd_estimate(args) -> None:
    wf = _workflow_from_ckpt(args)
    est = wf.estimate(_read_data(args.data))
    flat = {f"{name}/{stat}": v for name, stats in est.items() for stat, v in stats.items()}
    container.write(args.out, _float32(flat))


def cmd_diagnose(args) -> None:
    wf = _workflow_from_ckpt(args)
    test = _read_data(args.test)
    report = wf.compute_default_diagnostics(test)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    wf.plot_default_diagnostics(test, outdir, report)
    sys.stdout.write(report.to_csv())


def cmd_compare(args) -> None:
    cfg = _config(args)
    if cfg.comparison is None:
        raise ConfigError(f"{args.config}: no comparison section")
    test = _read_data(args.test)
    approx = fit_comparison(cfg)
    container.write(args.out, _float32({"model_probs": approx.classify(test)}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    parser = _Parser(prog="abikit", description="Amortized Bayesian inference workflows", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset container")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("online", "offline"), required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="posterior draws for each dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--num-samples", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("estimate", parents=[common], help="point estimates for each dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("diagnose", parents=[common], help="metric table and diagnostic figures")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("compare", parents=[common], help="posterior model probabilities")
    p.add_argument("--config", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        args.fn(args)
    except UsageError as e:
        print(f"abikit: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, AdapterError, ContainerError, FileNotFoundError) as e:
        print(f"abikit: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"abikit: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
