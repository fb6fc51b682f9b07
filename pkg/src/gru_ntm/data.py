"""Flow-record ingestion, balancing, min-max scaling, windowing and synthetic traffic.

Records are held column-wise: a ``(n, F)`` float64 feature matrix plus an
integer label vector. Class ids are frozen as Normal=0, DoS=1, DDoS=2.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .storage import FormatError, Reader, Writer
from .tensor import Rng, Tensor

CLASS_NAMES = ("Normal", "DoS", "DDoS")
NUM_CLASSES = len(CLASS_NAMES)
MAX_REJECT_FRACTION = 0.10


class IngestError(ValueError):
    pass


# -- schema ------------------------------------------------------------------

@dataclass
class Schema:
    """Declares how one CSV family maps onto flow records.

    Text form is flat ``key = value`` lines with ``#`` comments::

        label_column = label
        class.Normal = 0
        class.DoS = 1
        class.DDoS = 2
        drop = srcip, dstip
        categorical = proto, state
        categorical_mode = hash
    """

    label_column: str = "label"
    classes: dict[str, int] = field(default_factory=lambda: {n: i for i, n in enumerate(CLASS_NAMES)})
    drop: list[str] = field(default_factory=list)
    categorical: list[str] = field(default_factory=list)
    categorical_mode: str = "hash"

    def __post_init__(self):
        if self.categorical_mode not in ("hash", "drop"):
            raise ValueError(f"categorical_mode must be 'hash' or 'drop', got {self.categorical_mode!r}")
        for name, cid in self.classes.items():
            if not 0 <= cid < NUM_CLASSES:
                raise ValueError(f"class {name!r} maps to id {cid}, outside 0..{NUM_CLASSES - 1}")

    @classmethod
    def parse(cls, text: str) -> "Schema":
        kw: dict = {}
        classes: dict[str, int] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"schema line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("class."):
                classes[key[len("class."):]] = int(value)
            elif key in ("drop", "categorical"):
                kw[key] = [v.strip() for v in value.split(",") if v.strip()]
            elif key in ("label_column", "categorical_mode"):
                kw[key] = value
            else:
                raise ValueError(f"schema line {lineno}: unknown key {key!r}")
        if classes:
            kw["classes"] = classes
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        lines = [f"label_column = {self.label_column}"]
        lines += [f"class.{n} = {i}" for n, i in self.classes.items()]
        if self.drop:
            lines.append("drop = " + ", ".join(self.drop))
        if self.categorical:
            lines.append("categorical = " + ", ".join(self.categorical))
        lines.append(f"categorical_mode = {self.categorical_mode}")
        return "\n".join(lines) + "\n"

    def feature_columns(self, header: Sequence[str]) -> list[str]:
        skip = {self.label_column, *self.drop}
        if self.categorical_mode == "drop":
            skip.update(self.categorical)
        return [c for c in header if c not in skip]


def stable_hash(value: str) -> float:
    """Map a string to ``[0, 1)`` identically on every run and platform."""
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


# -- records -----------------------------------------------------------------

@dataclass
class FlowRecords:
    features: Tensor                 # (n, F)
    labels: np.ndarray               # (n,) int
    feature_names: tuple[str, ...] = ()
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "FlowRecords":
        idx = np.asarray(idx, dtype=np.int64)
        return FlowRecords(self.features[idx], self.labels[idx], self.feature_names)

    @classmethod
    def concat(cls, parts: Sequence["FlowRecords"]) -> "FlowRecords":
        return cls(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), parts[0].feature_names)


class RowParser:
    """Turns raw CSV rows into ``(feature_vector, class_id)`` under a schema.

    Categorical columns are hashed to ``[0, 1)`` (hash mode) or left out (drop
    mode). ``feature_names`` pins the expected feature columns, which is how
    new data is matched to a trained model.
    """

    def __init__(self, header: Sequence[str], schema: Schema, require_label: bool = True,
                 feature_names: Sequence[str] | None = None, source: str = "input"):
        header = [h.strip() for h in header]
        self.schema = schema
        self.source = source
        self.width = len(header)
        has_label = schema.label_column in header
        if require_label and not has_label:
            raise IngestError(f"{source}: label column {schema.label_column!r} not in header")
        columns = schema.feature_columns(header)
        if feature_names is not None:
            missing = [c for c in feature_names if c not in header]
            if missing:
                raise IngestError(
                    f"{source}: expected {len(feature_names)} features, missing columns {missing}"
                )
            columns = list(feature_names)
        self.feature_names = tuple(columns)
        self._cols = [header.index(c) for c in columns]
        self._hashed = {header.index(c) for c in schema.categorical if c in header}
        self._label = header.index(schema.label_column) if has_label else None

    def parse(self, row: Sequence[str]) -> tuple[list[float], int]:
        """Raises ``ValueError`` for a malformed row and ``IngestError`` for an unknown label."""
        if len(row) != self.width:
            raise ValueError(f"expected {self.width} cells, found {len(row)}")
        label = -1
        if self._label is not None:
            name = row[self._label].strip()
            if name not in self.schema.classes:
                raise IngestError(f"{self.source}: unknown label {name!r}")
            label = self.schema.classes[name]
        vec = [stable_hash(row[i].strip()) if i in self._hashed else float(row[i]) for i in self._cols]
        if not all(math.isfinite(v) for v in vec):
            raise ValueError("non-finite value")
        return vec, label


def ingest_csv(path, schema: Schema, require_label: bool = True,
               feature_names: Sequence[str] | None = None) -> FlowRecords:
    """Parse a headered CSV into records.

    Rows with an unparseable or non-finite numeric cell are rejected and
    counted; more than 10% rejected is a hard error, as is any label string the
    schema does not map.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        parser = RowParser(header, schema, require_label, feature_names, str(path))
        feats, labels, rejected = [], [], 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vec, label = parser.parse(row)
            except IngestError:
                raise
            except ValueError:
                rejected += 1
                continue
            feats.append(vec)
            labels.append(label)

    total = len(feats) + rejected
    if total and rejected / total > MAX_REJECT_FRACTION:
        raise IngestError(f"{path}: {rejected} of {total} rows rejected (over 10%)")
    width = len(parser.feature_names)
    features = np.asarray(feats, dtype=np.float64).reshape(len(feats), width)
    return FlowRecords(features, np.asarray(labels, dtype=np.int64), parser.feature_names, rejected)


def write_csv(records: FlowRecords, path, label_column: str = "label") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*records.feature_names, label_column])
        for vec, label in zip(records.features, records.labels):
            w.writerow([repr(float(v)) for v in vec] + [CLASS_NAMES[label]])


# -- balancing, scaling, labels ----------------------------------------------

def chunk_balance(per_class: Sequence, chunk_size: int = 80_000, seed: int = 0, stream: int = 1):
    """Take the same number of leading items from every class, then merge and shuffle.

    The count is ``min(chunk_size, smallest class)``. Works for anything with
    ``len``, ``subset`` and ``concat`` (records or windows).
    """
    if not per_class or any(len(p) == 0 for p in per_class):
        raise ValueError("chunk_balance needs a non-empty list for every class")
    k = min(chunk_size, *(len(p) for p in per_class))
    merged = type(per_class[0]).concat([p.subset(np.arange(k)) for p in per_class])
    order = Rng(seed, stream).permutation(len(merged))
    return merged.subset(order)


@dataclass
class NormStats:
    min: Tensor
    max: Tensor
    feature_names: tuple[str, ...] = ()
    categorical_mode: str = "hash"

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(),
                "feature_names": list(self.feature_names), "categorical_mode": self.categorical_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64),
                   tuple(d.get("feature_names", ())), d.get("categorical_mode", "hash"))


def fit_minmax(features, feature_names: Sequence[str] = (), categorical_mode: str = "hash") -> NormStats:
    """Per-feature min/max over the last axis of ``features`` (records or windows)."""
    if isinstance(features, FlowRecords):
        feature_names = feature_names or features.feature_names
        features = features.features
    x = np.asarray(features, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    return NormStats(flat.min(axis=0), flat.max(axis=0), tuple(feature_names), categorical_mode)


def apply_minmax(features, stats: NormStats):
    """Scale to ``[0, 1]``; constant features map to 0, out-of-range values clamp."""
    if isinstance(features, FlowRecords):
        return FlowRecords(apply_minmax(features.features, stats), features.labels,
                           features.feature_names, features.rejected)
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != len(stats.min):
        raise ValueError(f"expected {len(stats.min)} features, found {x.shape[-1]}")
    span = stats.max - stats.min
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (x - stats.min) / safe, 0.0)
    return np.clip(scaled, 0.0, 1.0)


def one_hot(label) -> Tensor:
    labels = np.asarray(label)
    if np.any((labels < 0) | (labels >= NUM_CLASSES)):
        raise ValueError(f"class id out of range 0..{NUM_CLASSES - 1}: {label}")
    return np.eye(NUM_CLASSES)[labels]


# -- windows -----------------------------------------------------------------

@dataclass
class WindowSet:
    """``n`` windows of shape ``(T, F)``, each labelled by its last record."""

    X: Tensor            # (n, T, F)
    y: np.ndarray        # (n,) int

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i):
        return self.X[i], one_hot(self.y[i])

    @property
    def onehot(self) -> Tensor:
        return one_hot(self.y)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.X[idx], self.y[idx])

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


def make_windows(records: FlowRecords, window: int = 10, stride: int = 1,
                 pure_windows: bool = False) -> WindowSet:
    n = len(records)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if n < window:
        raise ValueError(f"need at least {window} records for one window, got {n}")
    starts = np.arange(0, n - window + 1, stride)
    idx = starts[:, None] + np.arange(window)[None, :]
    X = records.features[idx]
    y = records.labels[starts + window - 1]
    if pure_windows:
        keep = np.all(records.labels[idx] == y[:, None], axis=1)
        X, y = X[keep], y[keep]
    return WindowSet(X.copy(), y.copy())


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_val_split(windows, val_fraction: float = 0.2, seed: int = 0, stream: int = 4):
    """Seeded shuffle, then the last ``round(n * val_fraction)`` (half-up) go to validation."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    n = len(windows)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    order = Rng(seed, stream).permutation(n)
    n_val = _half_up(n * val_fraction)
    return windows.subset(order[: n - n_val]), windows.subset(order[n - n_val:])


def reduce_fraction(windows, fraction: float = 0.2, seed: int = 0, stream: int = 3):
    """Uniform sample without replacement of ``round(n * fraction)`` items, original order kept."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = len(windows)
    k = _half_up(n * fraction)
    chosen = sorted(Rng(seed, stream).permutation(n)[:k])
    return windows.subset(chosen)


# -- window cache ------------------------------------------------------------

def save_windows(windows: WindowSet, path) -> None:
    n, T, F = windows.X.shape
    w = Writer(b"DSET")
    w.pack("IIQ", F, T, n)
    w.raw(np.asarray(windows.y, dtype="u1").tobytes())
    w.raw(np.ascontiguousarray(windows.X, dtype="<f8").tobytes())
    w.save(path)


def load_windows(path) -> WindowSet:
    r = Reader(path, b"DSET")
    F, T, n = r.unpack("IIQ")
    y = np.frombuffer(r.take(n), dtype="u1").astype(np.int64)
    X = np.frombuffer(r.take(8 * n * T * F), dtype="<f8").reshape(n, T, F).astype(np.float64)
    r.done()
    if np.any(y >= NUM_CLASSES):
        raise FormatError(f"{path}: label id out of range")
    return WindowSet(X, y)


# -- synthetic traffic -------------------------------------------------------

# (name, (mean, std) for Normal, DoS, DDoS)
_PROFILES = [
    ("pkt_rate", (100.0, 12.0), (900.0, 40.0), (950.0, 45.0)),
    ("src_entropy", (2.0, 0.15), (0.2, 0.05), (5.0, 0.2)),
    ("top_src_share", (0.20, 0.03), (0.92, 0.02), (0.04, 0.01)),
    ("byte_rate", (5.0e4, 6.0e3), (2.0e5, 1.2e4), (2.4e5, 1.5e4)),
    ("mean_pkt_size", (600.0, 40.0), (120.0, 10.0), (140.0, 12.0)),
    ("syn_ratio", (0.05, 0.01), (0.70, 0.05), (0.50, 0.05)),
    ("dst_port_entropy", (3.0, 0.2), (0.3, 0.05), (0.6, 0.1)),
    ("flow_duration", (2.0, 0.3), (0.10, 0.02), (0.15, 0.03)),
    ("ttl_mean", (64.0, 2.0), (64.0, 2.0), (60.0, 3.0)),
    ("ack_ratio", (0.50, 0.05), (0.10, 0.03), (0.15, 0.04)),
    ("conn_count", (20.0, 4.0), (400.0, 30.0), (800.0, 50.0)),
    ("iat_mean", (0.010, 0.002), (0.0010, 0.0002), (0.0010, 0.0002)),
]
# features modulated by the attack burst ramp
_RATE_FEATURES = {"pkt_rate", "byte_rate", "conn_count"}
SIGNATURE_FEATURES = ("pkt_rate", "src_entropy")


def synth_feature_names(n: int) -> list[str]:
    names = [p[0] for p in _PROFILES[:n]]
    return names + [f"aux_{i}" for i in range(len(names), n)]


@dataclass
class SynthSpec:
    seed: int = 7
    per_class: int = 2000
    features: int = 12
    rho: float = 0.8                       # AR(1) coefficient of the noise
    ramp_period: tuple[int, int] = (25, 40)        # DoS, DDoS burst periods
    ramp_amplitude: tuple[float, float] = (0.2, 0.3)

    def __post_init__(self):
        if self.features < 2:
            raise ValueError("synthetic traffic needs at least 2 features")
        if self.per_class < 10:
            raise ValueError("per_class must be >= 10")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must be in [0, 1)")

    def profile(self, cls: int) -> tuple[Tensor, Tensor]:
        """Per-feature (mean, std) of the stationary noise for class ``cls``."""
        means, stds = [], []
        for i in range(self.features):
            if i < len(_PROFILES):
                m, s = _PROFILES[i][1 + cls]
            else:
                m, s = 0.0, 1.0
            means.append(m)
            stds.append(s)
        return np.array(means), np.array(stds)


def synth_generate(spec: SynthSpec) -> list[FlowRecords]:
    """One contiguous, autocorrelated record stream per class."""
    names = synth_feature_names(spec.features)
    out = []
    for cls in range(NUM_CLASSES):
        rng = Rng(spec.seed, 100 + cls)
        mean, std = spec.profile(cls)
        n, F = spec.per_class, spec.features
        shocks = rng.normal((n, F))
        noise = np.empty((n, F))
        noise[0] = shocks[0]
        innov = math.sqrt(1.0 - spec.rho**2)
        for t in range(1, n):
            noise[t] = spec.rho * noise[t - 1] + innov * shocks[t]
        x = mean + std * noise
        if cls > 0:
            period = spec.ramp_period[cls - 1]
            amp = spec.ramp_amplitude[cls - 1]
            phase0 = rng.below(period)
            saw = ((np.arange(n) + phase0) % period) / period - 0.5
            for j, name in enumerate(names):
                if name in _RATE_FEATURES:
                    x[:, j] *= 1.0 + amp * saw
        out.append(FlowRecords(x, np.full(n, cls, dtype=np.int64), tuple(names)))
    return out


def synth_schema() -> Schema:
    return Schema()
