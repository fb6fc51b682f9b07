"""End-to-end flows behind the CLI: synthesize, build datasets, train, evaluate, detect."""
from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from . import data as D
from .config import RunConfig
from .evaluation import EvalReport, emit_report, evaluate_predictions
from .model import predict_proba
from .training import Checkpoint, EpochLog, load_checkpoint, save_checkpoint, train, write_epoch_log

log = logging.getLogger(__name__)

CLASS_FILES = ("normal.csv", "dos.csv", "ddos.csv")
SCHEMA_FILE = "schema.txt"

BALANCE_STREAM = 1
TEST_BALANCE_STREAM = 7


class DataMismatch(ValueError):
    pass


def synthesize(spec: D.SynthSpec, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, records in zip(CLASS_FILES, D.synth_generate(spec)):
        D.write_csv(records, out / name)
        written.append(out / name)
    (out / SCHEMA_FILE).write_text(D.synth_schema().to_text())
    written.append(out / SCHEMA_FILE)
    return written


def resolve_inputs(data: str, schema: str = "") -> tuple[list[Path], D.Schema]:
    """``data`` is a directory of CSVs (schema.txt inside) or a comma-separated file list."""
    if not data:
        raise FileNotFoundError("no input data given")
    p = Path(data)
    if p.is_dir():
        files = sorted(f for f in p.glob("*.csv"))
        schema_path = Path(schema) if schema else p / SCHEMA_FILE
    else:
        files = [Path(s.strip()) for s in data.split(",") if s.strip()]
        schema_path = Path(schema) if schema else None
    missing = [str(f) for f in files if not f.is_file()]
    if missing or not files:
        raise FileNotFoundError(f"input CSV files not found: {missing or data}")
    sch = D.Schema.load(schema_path) if schema_path else D.Schema()
    return files, sch


def load_streams(files, schema: D.Schema, feature_names=None) -> list[D.FlowRecords]:
    streams = [D.ingest_csv(f, schema, feature_names=feature_names) for f in files]
    names = {s.feature_names for s in streams}
    if len(names) > 1:
        raise DataMismatch(f"input files disagree on feature columns: {sorted(names)}")
    for f, s in zip(files, streams):
        if s.rejected:
            log.warning("%s: %d rows rejected", f, s.rejected)
    return streams


def windows_by_class(streams, window: int, stride: int, pure: bool) -> list[D.WindowSet]:
    """Cut windows inside each file's stream, then pool them by class."""
    cut = [D.make_windows(s, window, stride, pure) for s in streams if len(s) >= window]
    pooled = D.WindowSet.concat(cut)
    return [pooled.subset(np.flatnonzero(pooled.y == c)) for c in range(D.NUM_CLASSES)]


@dataclass
class Datasets:
    train: D.WindowSet
    val: D.WindowSet
    test: D.WindowSet          # raw (unscaled) features
    norm: D.NormStats


def build_datasets(run: RunConfig, streams: list[D.FlowRecords], schema: D.Schema) -> Datasets:
    """Hold out the chronological tail of every stream as test data, window both
    parts, balance classes, then reduce, split off validation and fit scaling on
    the training part alone."""
    heads, tails = [], []
    for s in streams:
        n_test = D._half_up(len(s) * run.test_fraction)
        heads.append(s.subset(np.arange(len(s) - n_test)))
        tails.append(s.subset(np.arange(len(s) - n_test, len(s))))

    train_pool = D.chunk_balance(windows_by_class(heads, run.window, run.stride, run.pure_windows),
                                 run.chunk_size, run.seed, BALANCE_STREAM)
    test = D.chunk_balance(windows_by_class(tails, run.window, run.stride, run.pure_windows),
                           run.chunk_size, run.seed, TEST_BALANCE_STREAM)
    reduced = D.reduce_fraction(train_pool, run.reduce_fraction, run.seed)
    tr, va = D.train_val_split(reduced, run.val_fraction, run.seed)
    norm = D.fit_minmax(tr.X, streams[0].feature_names, schema.categorical_mode)
    tr = D.WindowSet(D.apply_minmax(tr.X, norm), tr.y)
    va = D.WindowSet(D.apply_minmax(va.X, norm), va.y)
    return Datasets(tr, va, test, norm)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    logs: list[EpochLog]
    datasets: Datasets
    out_dir: Path


def run_training(run: RunConfig) -> TrainResult:
    files, schema = resolve_inputs(run.data, run.schema)
    streams = load_streams(files, schema)
    ds = build_datasets(run, streams, schema)
    log.info("windows: train %d, val %d, test %d", len(ds.train), len(ds.val), len(ds.test))
    out = Path(run.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    config = run.model_config(ds.train.X.shape[2])
    ckpt_path = out / "checkpoint.gntm"
    ckpt, logs = train(config, ds.train, ds.val, run.train_config(), norm=ds.norm,
                       checkpoint_path=ckpt_path)
    save_checkpoint(ckpt, ckpt_path)
    write_epoch_log(logs, out / "epoch_log.csv")
    D.save_windows(ds.test, out / "test.gntm")
    (out / "norm.json").write_text(json.dumps(ds.norm.to_dict(), indent=2) + "\n")
    (out / "schema.txt").write_text(schema.to_text())
    (out / "run.cfg").write_text(run.to_text())
    return TrainResult(ckpt, logs, ds, out)


def load_eval_windows(data: str, schema: str, ckpt: Checkpoint, run: RunConfig) -> D.WindowSet:
    """Raw windows from a ``.gntm`` cache or from labelled CSVs."""
    if data.endswith(".gntm"):
        ws = D.load_windows(data)
    else:
        files, sch = resolve_inputs(data, schema)
        names = ckpt.norm.feature_names if ckpt.norm and ckpt.norm.feature_names else None
        streams = load_streams(files, sch, feature_names=names)
        ws = D.WindowSet.concat([D.make_windows(s, ckpt.config.window, 1, run.pure_windows)
                                 for s in streams if len(s) >= ckpt.config.window])
    expected = (ckpt.config.window, ckpt.config.input_features)
    if ws.X.shape[1:] != expected:
        raise DataMismatch(
            f"model expects windows of {expected[0]} steps x {expected[1]} features, "
            f"found {ws.X.shape[1]} x {ws.X.shape[2]}"
        )
    return ws


def run_eval(run: RunConfig, epoch_logs=None) -> EvalReport:
    ckpt = load_checkpoint(run.checkpoint)
    ws = load_eval_windows(run.data, run.schema, ckpt, run)
    X = D.apply_minmax(ws.X, ckpt.norm) if ckpt.norm is not None else ws.X
    report = evaluate_predictions(predict_proba(ckpt.params, X), ws.y)
    if epoch_logs is None:
        sibling = Path(run.checkpoint).with_name("epoch_log.csv")
        if sibling.is_file():
            from .training import read_epoch_log

            epoch_logs = read_epoch_log(sibling)
    emit_report(report, run.out or "report", epoch_logs)
    return report


def detect_stream(ckpt: Checkpoint, lines: Iterable[str], schema: D.Schema, out: TextIO,
                  min_confidence: float = 0.0, err: TextIO | None = None) -> int:
    """Classify a time-ordered CSV stream with a rolling window.

    Emits ``index,class,p_Normal,p_DoS,p_DDoS`` for every record from the
    window-th onward (``index`` is the 1-based record number). Returns the
    number of classification rows written.
    """
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        header = None
    T = ckpt.config.window
    if header is None:
        if err:
            print(f"warm-up: 0 of {T} records received, no classifications", file=err)
        return 0
    names = ckpt.norm.feature_names if ckpt.norm and ckpt.norm.feature_names else None
    parser = D.RowParser(header, schema, require_label=False, feature_names=names, source="detect")
    if len(parser.feature_names) != ckpt.config.input_features:
        raise DataMismatch(f"model expects {ckpt.config.input_features} features, "
                           f"input has {len(parser.feature_names)}")
    buf: deque = deque(maxlen=T)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["index", "class", *(f"p_{c}" for c in D.CLASS_NAMES)])
    index = emitted = 0
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vec, _ = parser.parse(row)
        except ValueError as exc:
            if err:
                print(f"skipping malformed row after record {index}: {exc}", file=err)
            continue
        index += 1
        x = np.asarray(vec)
        buf.append(D.apply_minmax(x, ckpt.norm) if ckpt.norm is not None else x)
        if len(buf) < T:
            continue
        probs = predict_proba(ckpt.params, np.asarray(buf)[None])[0]
        cls = int(np.argmax(probs))
        name = D.CLASS_NAMES[cls] if probs[cls] >= min_confidence else "uncertain"
        w.writerow([index, name, *(f"{p:.6f}" for p in probs)])
        out.flush()
        emitted += 1
    if index < T and err:
        print(f"warm-up: {index} of {T} records received, no classifications", file=err)
    return emitted
