"""Online federated learning core: sliding windows, averaging, metrics, I/O.

Flows are vehicles per 5-minute interval on a strict 5-minute timestamp
grid. Models consume values normalized by a configurable flow ceiling; the
prediction curves and error metrics below are reported back in raw units.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import gru
from .gru import GruModel, TrainingError

DEFAULT_FLOW_CEILING = 1200.0

CSV_HEADER = ("timestamp", "detector_id", "flow")


class OrderingError(ValueError):
    """Samples arrived out of chronological order."""


class PartialRoundError(ValueError):
    """An incoming stream is shorter than one inference period."""


@dataclass(frozen=True)
class TrafficSample:
    timestamp: int  # minutes since epoch, on the 5-minute grid
    detector_id: str
    flow: float

    def __post_init__(self):
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "flow", float(self.flow))
        if self.timestamp % 5 != 0:
            raise ValueError(f"timestamp {self.timestamp} not on the 5-minute grid")
        if self.flow < 0:
            raise ValueError("flow must be nonnegative")


@dataclass(frozen=True)
class DataWindow:
    """Bounded chronological window of one detector's samples."""

    samples: tuple
    max_size: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.max_size < 1:
            raise ValueError("max_size must be positive")
        if len(self.samples) > self.max_size:
            raise ValueError("window exceeds max_size")
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.timestamp <= prev.timestamp:
                raise OrderingError("window timestamps must strictly increase")
            if cur.detector_id != prev.detector_id:
                raise ValueError("window mixes detectors")

    def __len__(self):
        return len(self.samples)

    def flows(self) -> list[float]:
        return [s.flow for s in self.samples]

    def normalized(self, ceiling: float = DEFAULT_FLOW_CEILING) -> list[float]:
        return [s.flow / ceiling for s in self.samples]

    @classmethod
    def empty(cls, max_size: int) -> "DataWindow":
        return cls(samples=(), max_size=max_size)


def update_dataset(old: DataWindow, incoming) -> DataWindow:
    """Append newly collected samples, dropping the oldest past max_size."""
    incoming = tuple(incoming)
    if not incoming:
        return old
    if old.samples and incoming[0].timestamp <= old.samples[-1].timestamp:
        raise OrderingError("incoming samples must postdate the window")
    merged = old.samples + incoming
    if len(merged) > old.max_size:
        merged = merged[len(merged) - old.max_size:]
    return DataWindow(samples=merged, max_size=old.max_size)


def train_local(model: GruModel, window: DataWindow, epochs: int,
                learning_rate: float, flow_ceiling: float = DEFAULT_FLOW_CEILING,
                dropout_rate: float = 0.0, dropout_rng=None) -> gru.TrainingResult:
    """Fit the window's supervised pairs with SGD; see gru.train_values."""
    return gru.train_values(
        model, window.normalized(flow_ceiling), epochs, learning_rate,
        dropout_rate=dropout_rate, dropout_rng=dropout_rng,
    )


@dataclass(frozen=True)
class InferenceCurves:
    base: tuple  # baseline model predictions, raw flow units
    fed: tuple   # federated model predictions, raw flow units
    true: tuple  # collected ground truth


def online_inference(global_model: GruModel, baseline_model: GruModel,
                     window: DataWindow, incoming,
                     flow_ceiling: float = DEFAULT_FLOW_CEILING) -> InferenceCurves:
    """One-step-ahead predictions while a round's data streams in.

    Both models predict from the same sliding window of the most recent
    input_shape values; after each prediction the newly collected true value
    is shifted in. Returns three curves of length input_shape.
    """
    p = global_model.shape.input_shape
    if baseline_model.shape.input_shape != p:
        raise TrainingError("baseline and federated models disagree on input_shape")
    if len(window) < p:
        raise TrainingError(f"window holds {len(window)} samples; need {p}")
    incoming = tuple(incoming)
    if len(incoming) < p:
        raise PartialRoundError(f"incoming stream has {len(incoming)} samples; need {p}")
    history = window.normalized(flow_ceiling)[-p:]
    base, fed, true = [], [], []
    for j in range(p):
        base.append(gru.gru_forward(baseline_model, history) * flow_ceiling)
        fed.append(gru.gru_forward(global_model, history) * flow_ceiling)
        sample = incoming[j]
        true.append(sample.flow)
        history = history[1:] + [sample.flow / flow_ceiling]
    return InferenceCurves(base=tuple(base), fed=tuple(fed), true=tuple(true))


def plaintext_fedavg(vectors) -> np.ndarray:
    """Elementwise mean of equally weighted client parameter vectors."""
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not arrays:
        raise ValueError("need at least one vector")
    length = arrays[0].shape
    if any(a.shape != length for a in arrays):
        raise ValueError("parameter vectors differ in length")
    return np.mean(arrays, axis=0)


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    rmse: float
    mape: float
    mape_skipped: int = 0


def compute_metrics(pred, truth) -> Metrics:
    """Standard regression errors; MAPE skips zero-valued truths."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ValueError("pred and truth must be equal-length and non-empty")
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    positive = truth > 0
    skipped = int(np.sum(~positive))
    if skipped == truth.size:
        mape = float("nan")
    else:
        mape = float(np.mean(np.abs(err[positive]) / truth[positive]))
    return Metrics(mae=mae, mse=mse, rmse=math.sqrt(mse), mape=mape, mape_skipped=skipped)


# ---------------------------------------------------------------------------
# external interfaces: traffic CSV and parameter export


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    seconds = dt.timestamp()
    if seconds % 60 != 0:
        raise ValueError(f"timestamp {text!r} not aligned to whole minutes")
    return int(seconds // 60)


def load_traffic_csv(source) -> list[TrafficSample]:
    """Parse `timestamp,detector_id,flow` rows; grid violations are errors."""
    if isinstance(source, str):
        handle = io.StringIO(source) if "\n" in source or "," in source else open(source)
    else:
        handle = source
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"expected header {','.join(CSV_HEADER)}")
        samples = []
        last_seen: dict[str, int] = {}
        for row in reader:
            if not row:
                continue
            ts = _parse_timestamp(row[0])
            detector = row[1].strip()
            sample = TrafficSample(timestamp=ts, detector_id=detector, flow=float(row[2]))
            if detector in last_seen and ts <= last_seen[detector]:
                raise OrderingError(f"detector {detector} timestamps not increasing")
            last_seen[detector] = ts
            samples.append(sample)
    return samples


def group_by_detector(samples) -> dict[str, list[TrafficSample]]:
    grouped: dict[str, list[TrafficSample]] = {}
    for s in samples:
        grouped.setdefault(s.detector_id, []).append(s)
    return grouped


def traffic_to_csv(samples) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in samples:
        writer.writerow([s.timestamp, s.detector_id, repr(s.flow)])
    return out.getvalue()


def params_to_csv(weights) -> str:
    lines = ["weight"]
    lines.extend(repr(float(w)) for w in np.asarray(weights, dtype=np.float64))
    return "\n".join(lines) + "\n"


def params_from_csv(text: str) -> np.ndarray:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != "weight":
        raise ValueError("expected single-column weight CSV")
    return np.array([float(line) for line in lines[1:]], dtype=np.float64)


def shape_descriptor_json(shape: gru.ModelShape) -> str:
    return json.dumps(shape.to_dict(), sort_keys=True)


def shape_from_json(text: str) -> gru.ModelShape:
    return gru.ModelShape.from_dict(json.loads(text))
