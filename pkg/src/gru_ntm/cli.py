"""``gntm`` command line: synth, train, eval, detect, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(divergence, I/O, incompatible data), 3 gradient check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data as D
from .config import KEYS, ConfigError, RunConfig, resolve
from .gradcheck import TINY_CONFIG, grad_check
from .pipeline import DataMismatch, detect_stream, run_eval, run_training, synthesize
from .storage import FormatError
from .training import DivergenceError, load_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


_HELP = {
    "seed": "random seed (default: $GNTM_SEED or 0)",
    "per_class": "records generated per class",
    "features": "number of synthetic features",
    "data": "CSV directory (with schema.txt), comma-separated CSV list, or .gntm window cache",
    "schema": "schema file (defaults to <data>/schema.txt)",
    "out": "output directory",
    "checkpoint": "checkpoint file",
    "input": "CSV stream to classify ('-' for stdin)",
    "min_confidence": "print 'uncertain' when the top probability is below this",
    "tolerance": "maximum relative error allowed",
    "coords": "number of parameter coordinates to check",
}

_COMMAND_KEYS = {
    "synth": ["seed", "per_class", "features", "out"],
    "train": ["seed", "data", "schema", "out", "window", "stride", "chunk_size", "test_fraction",
              "pure_windows", "lr", "beta1", "beta2", "epsilon", "batch_size", "max_epochs",
              "patience", "val_fraction", "reduce_fraction", "min_delta", "record_time",
              "gru1_units", "gru2_units", "memory_rows", "memory_width", "controller_units",
              "dense_units", "additive_write", "learned_memory"],
    "eval": ["checkpoint", "data", "schema", "out", "pure_windows"],
    "detect": ["checkpoint", "input", "schema", "min_confidence"],
    "gradcheck": ["seed", "tolerance", "coords"],
}

_DESCRIPTIONS = {
    "synth": "write per-class synthetic traffic CSVs and a schema file",
    "train": "build windows from CSVs and train with early stopping",
    "eval": "score a checkpoint and write report files",
    "detect": "classify a time-ordered CSV stream with a rolling window",
    "gradcheck": "compare backprop with central finite differences",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gntm", description="GRU + Neural Turing Machine traffic classifier")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, keys in _COMMAND_KEYS.items():
        p = sub.add_parser(cmd, help=_DESCRIPTIONS[cmd], description=_DESCRIPTIONS[cmd])
        p.add_argument("--config", help="key = value config file; flags override it")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            help_text = _HELP.get(key, f"default: {getattr(RunConfig(), key)}")
            if KEYS[key].type == "bool":
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                               default=None, help=help_text)
            else:
                p.add_argument(flag, dest=key, default=None, metavar=key.upper(), help=help_text)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in _COMMAND_KEYS[args.command]}


def cmd_synth(run: RunConfig) -> int:
    spec = D.SynthSpec(seed=run.seed, per_class=run.per_class, features=run.features)
    for path in synthesize(spec, run.out or "synth"):
        print(path)
    return EXIT_OK


def cmd_train(run: RunConfig) -> int:
    result = run_training(run)
    best = result.checkpoint.metadata
    print(f"epochs={len(result.logs)} best_epoch={best['epoch']} "
          f"best_val_loss={best['val_loss']:.6f} out={result.out_dir}")
    return EXIT_OK


def cmd_eval(run: RunConfig) -> int:
    if not run.checkpoint or not run.data:
        raise UsageError("eval needs --checkpoint and --data")
    report = run_eval(run)
    print(report.summary())
    return EXIT_OK


def cmd_detect(run: RunConfig) -> int:
    if not run.checkpoint:
        raise UsageError("detect needs --checkpoint")
    ckpt = load_checkpoint(run.checkpoint)
    if run.schema:
        schema = D.Schema.load(run.schema)
    else:
        sibling = Path(run.checkpoint).with_name("schema.txt")
        schema = D.Schema.load(sibling) if sibling.is_file() else D.Schema()
    if run.input == "-":
        detect_stream(ckpt, sys.stdin, schema, sys.stdout, run.min_confidence, sys.stderr)
    else:
        with open(run.input, newline="") as fh:
            detect_stream(ckpt, fh, schema, sys.stdout, run.min_confidence, sys.stderr)
    return EXIT_OK


def cmd_gradcheck(run: RunConfig) -> int:
    report = grad_check(TINY_CONFIG, seed=run.seed, tolerance=run.tolerance, coords=run.coords)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} max_rel_error={report.max_rel_error:.3e} worst={report.worst} "
          f"coords={report.coords_checked} tensors={report.tensors_covered}/{report.tensors_total} "
          f"tolerance={run.tolerance:g}")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = resolve(args.config, _overrides(args))
        return COMMANDS[args.command](run)
    except (ConfigError, UsageError, DataMismatch, D.IngestError) as exc:
        print(f"gntm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FormatError, OSError, ValueError) as exc:
        print(f"gntm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
