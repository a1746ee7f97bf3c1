# dataset_utils.py - Synthetic OR-task generator, ADL ingestion, splits and evaluation sampling.

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import re

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SYNTHETIC_CLASSES = ["A", "B", "C", "D"]
SYNTHETIC_CHANNELS = ["x1", "x2"]
BIAS_CHANNEL = "bias"
OTHER_CLASS = "Other"
ADL_ACTIVITIES = [
    "Breakfast", "Dinner", "Grooming", "Leaving", "Lunch",
    "Showering", "Sleeping", "Snack", "Spare_Time/TV", "Toileting",
]
DEFAULT_WINDOW = 1000

# (x1, x2) -> class index, looked up at x1 * 2 + x2: (0,0)->A, (0,1)->C, (1,0)->D, (1,1)->B
_SYNTHETIC_LOOKUP = np.array([0, 2, 3, 1], dtype=np.int64)

_ROW = re.compile(
    r"^\s*(\d{4}-\d{2}-\d{2}\s+\d{2}:\d{2}:\d{2})\s+(\d{4}-\d{2}-\d{2}\s+\d{2}:\d{2}:\d{2})\s+(\S.*?)\s*$"
)


class AdlParseError(ValueError):
    """Raised for malformed or inconsistent ADL input files."""

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        location = f"{path}:{line_number}: " if path is not None and line_number is not None else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_number = line_number


@dataclass
class LabeledSeries:
    """Binary D x T series with one class label per step."""
    data: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    channel_names: List[str]
    dt_seconds: float = 1.0
    has_bias: bool = True
    mode: str = "synthetic"

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 2 or self.labels.shape != (self.data.shape[1],):
            raise ValueError(f"data {self.data.shape} and labels {self.labels.shape} disagree")
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError(f"{len(self.channel_names)} channel names for {self.data.shape[0]} channels")
        if self.data.size and self.data.max() > 1:
            raise ValueError("series data must be binary")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels outside the class list")
        if self.has_bias and self.data.size and not np.all(self.data[-1] == 1):
            raise ValueError("bias channel (last row) must be identically 1")

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def bias_dim(self) -> Optional[int]:
        return self.n_channels - 1 if self.has_bias else None

    def slice(self, start: int, stop: int) -> "LabeledSeries":
        return LabeledSeries(self.data[:, start:stop], self.labels[start:stop], list(self.class_names),
                             list(self.channel_names), self.dt_seconds, self.has_bias, self.mode)


@dataclass(frozen=True)
class EvalSample:
    """An explanation step t inside a split, with its ground-truth label."""
    series: LabeledSeries = field(compare=False, repr=False)
    t: int = 0
    true_label: int = 0

    def window(self, length: int = DEFAULT_WINDOW) -> np.ndarray:
        """Input window [t - length, t] as a float array of length + 1 steps."""
        if self.t < length:
            raise ValueError(f"step {self.t} leaves no full window of {length} steps")
        return self.series.data[:, self.t - length:self.t + 1].astype(np.float64)


# Interval helpers
def runs_of_ones(row: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs of 1s in a binary row as inclusive (start, end) pairs."""
    padded = np.concatenate([[0], np.asarray(row, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [(int(start), int(end) - 1) for start, end in zip(edges[0::2], edges[1::2])]


def runs_of_values(values: np.ndarray) -> List[Tuple[int, int, int]]:
    """Maximal constant runs of an integer sequence as (value, start, end)."""
    values = np.asarray(values)
    if values.size == 0:
        return []
    boundaries = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries - 1, [values.size - 1]])
    return [(int(values[start]), int(start), int(end)) for start, end in zip(starts, ends)]


def expand_intervals(intervals: Sequence[Tuple[int, int]], n_steps: int) -> np.ndarray:
    """Binary row that is 1 exactly on each inclusive interval."""
    row = np.zeros(n_steps, dtype=np.uint8)
    for start, end in intervals:
        row[start:end + 1] = 1
    return row


# Synthetic OR task
def label_synthetic(x1: int, x2: int) -> int:
    """(0,0)->A, (1,1)->B, (0,1)->C, (1,0)->D as class indices 0..3."""
    if x1 not in (0, 1) or x2 not in (0, 1):
        raise ValueError(f"inputs must be bits, got ({x1}, {x2})")
    return int(_SYNTHETIC_LOOKUP[x1 * 2 + x2])


def synthetic_segments(total_steps: int, max_duration: int,
                       rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Durations ~ Uniform{1..max_duration} and values ~ Bernoulli(0.5) until total_steps is covered."""
    durations, values = [], []
    covered = 0
    while covered < total_steps:
        duration = int(rng.integers(1, max_duration + 1))
        durations.append(duration)
        values.append(int(rng.integers(0, 2)))
        covered += duration
    return np.array(durations, dtype=np.int64), np.array(values, dtype=np.uint8)


def generate_synthetic(total_steps: int = 900_000, max_duration: int = 600, seed: int = 7) -> LabeledSeries:
    """Two independently segmented binary channels, OR-task labels, and a bias row."""
    if total_steps <= 0 or max_duration < 1:
        raise ValueError(f"need total_steps > 0 and max_duration >= 1, got {total_steps}, {max_duration}")

    rng = np.random.default_rng(seed)
    channels = []
    for _ in SYNTHETIC_CHANNELS:
        durations, values = synthetic_segments(total_steps, max_duration, rng)
        channels.append(np.repeat(values, durations)[:total_steps])

    data = np.vstack(channels + [np.ones(total_steps, dtype=np.uint8)])
    labels = _SYNTHETIC_LOOKUP[data[0].astype(np.int64) * 2 + data[1]]
    logger.info("Generated synthetic series of %d steps (seed %d)", total_steps, seed)
    return LabeledSeries(data, labels, list(SYNTHETIC_CLASSES), SYNTHETIC_CHANNELS + [BIAS_CHANNEL],
                         dt_seconds=1.0, has_bias=True, mode="synthetic")


# ADL ingestion
def _read_rows(path: str) -> List[Tuple[int, pd.Timestamp, pd.Timestamp, List[str]]]:
    """Parse a UCI ADL file: two header lines, then start, end and descriptive columns."""
    rows = []
    with open(path, encoding="utf-8", errors="replace") as handle:
        for line_number, line in enumerate(handle, start=1):
            if line_number <= 2 or not line.strip():
                continue
            match = _ROW.match(line)
            if not match:
                raise AdlParseError(f"malformed row {line.strip()!r}", path, line_number)
            try:
                start, end = pd.Timestamp(match.group(1)), pd.Timestamp(match.group(2))
            except ValueError as exc:
                raise AdlParseError(f"bad timestamp ({exc})", path, line_number) from exc
            rows.append((line_number, start, end, match.group(3).split()))
    return rows


def read_sensor_catalog(description_file: Optional[str]) -> Optional[List[str]]:
    """Sensor locations listed in a subject description file, in file order, if any are found."""
    if not description_file:
        return None
    locations: List[str] = []
    in_table = False
    with open(description_file, encoding="utf-8", errors="replace") as handle:
        for line in handle:
            tokens = line.split()
            if not tokens:
                in_table = False
                continue
            if tokens[0].lower() == "location":
                in_table = True
                continue
            if in_table and not set(tokens[0]) <= set("-") and tokens[0] not in locations:
                locations.append(tokens[0])
    if not locations:
        logger.warning("No sensor table found in %s; channels come from the sensor events", description_file)
    return locations or None


def ingest_adl(description_file: Optional[str], sensor_events: str, activity_labels: str,
               subject: str) -> LabeledSeries:
    """Expand UCI ADL intervals to a per-second binary matrix with activity labels and a bias row."""
    if subject not in ("A", "B"):
        raise ValueError(f"subject must be 'A' or 'B', got {subject!r}")

    sensor_rows = _read_rows(sensor_events)
    activity_rows = _read_rows(activity_labels)
    if not sensor_rows or not activity_rows:
        raise AdlParseError("sensor and activity files must both contain rows")

    # Activities whose end precedes their start are dropped and their span left to Other.
    kept = []
    for index, (line_number, start, end, columns) in enumerate(activity_rows):
        if end < start:
            logger.warning("Subject %s: dropping activity row %d (%s, line %d): end precedes start",
                           subject, index, columns[0], line_number)
            continue
        kept.append((line_number, start, end, columns[0]))

    kept.sort(key=lambda row: row[1])
    for previous, current in zip(kept, kept[1:]):
        if current[1] < previous[2]:
            raise AdlParseError(
                f"activity {current[3]} starting {current[1]} overlaps {previous[3]} "
                f"(line {previous[0]}) ending {previous[2]}", activity_labels, current[0])

    origin = min(min(row[1] for row in sensor_rows), min(row[1] for row in kept))
    finish = max(max(row[2] for row in sensor_rows), max(row[2] for row in kept))
    n_steps = int((finish - origin).total_seconds()) + 1

    def offset(stamp: pd.Timestamp) -> int:
        return int((stamp - origin).total_seconds())

    catalog = read_sensor_catalog(description_file) or []
    seen = sorted({row[3][0] for row in sensor_rows} - set(catalog))
    channels = catalog + seen
    intervals: Dict[str, List[Tuple[int, int]]] = {channel: [] for channel in channels}
    for line_number, start, end, columns in sensor_rows:
        if end < start:
            raise AdlParseError("sensor event ends before it starts", sensor_events, line_number)
        intervals[columns[0]].append((offset(start), offset(end)))
    rows = [expand_intervals(intervals[channel], n_steps) for channel in channels]
    data = np.stack(rows + [np.ones(n_steps, dtype=np.uint8)])

    unknown = sorted({row[3] for row in kept} - set(ADL_ACTIVITIES))
    if unknown:
        logger.warning("Subject %s: activities outside the known list: %s", subject, unknown)
    class_names = sorted(set(ADL_ACTIVITIES) | set(unknown)) + [OTHER_CLASS]
    labels = np.full(n_steps, len(class_names) - 1, dtype=np.int64)
    for _, start, end, name in kept:
        labels[offset(start):offset(end) + 1] = class_names.index(name)

    logger.info("Subject %s: %d seconds, %d sensors, %d classes", subject, n_steps, len(channels),
                len(class_names))
    return LabeledSeries(data, labels, class_names, channels + [BIAS_CHANNEL],
                         dt_seconds=1.0, has_bias=True, mode="adl")


# Splits and evaluation sets
def split_sequential(series: LabeledSeries, fractions: Sequence[float]) -> List[LabeledSeries]:
    """Contiguous prefix splits in order, e.g. [0.7, 0.3] or [0.6, 0.2, 0.2]."""
    fractions = [float(fraction) for fraction in fractions]
    if not fractions or any(fraction <= 0 for fraction in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")

    bounds = np.round(np.cumsum(fractions) * series.n_steps).astype(int)
    bounds[-1] = series.n_steps
    starts = np.concatenate([[0], bounds[:-1]])
    return [series.slice(int(start), int(stop)) for start, stop in zip(starts, bounds)]


def _draw(rng: np.random.Generator, pool: np.ndarray, count: int) -> List[int]:
    if pool.size == 0 or count <= 0:
        return []
    return sorted(int(t) for t in rng.choice(pool, size=min(count, pool.size), replace=False))


def sample_eval_set(split: LabeledSeries, mode: str, seed: int, window: int = DEFAULT_WINDOW,
                    per_class: int = 25, per_region: int = 3) -> List[EvalSample]:
    """Balanced explanation steps: uniform per class (synthetic) or start/middle/end of activities (adl)."""
    if mode not in ("synthetic", "adl"):
        raise ValueError(f"mode must be 'synthetic' or 'adl', got {mode!r}")
    if split.n_steps <= window:
        raise ValueError(f"split of {split.n_steps} steps cannot host a {window}-step window")

    rng = np.random.default_rng(seed)
    minute = max(1, int(round(60.0 / split.dt_seconds)))
    samples: List[EvalSample] = []

    for label, name in enumerate(split.class_names):
        if mode == "synthetic":
            pool = np.flatnonzero(split.labels[window:] == label) + window
            chosen = _draw(rng, pool, per_class)
            wanted = per_class
        else:
            regions: Dict[str, List[np.ndarray]] = {"start": [], "middle": [], "end": []}
            for value, start, end in runs_of_values(split.labels):
                if value != label:
                    continue
                regions["start"].append(np.arange(start, min(end, start + minute - 1) + 1))
                regions["end"].append(np.arange(max(start, end - minute + 1), end + 1))
                regions["middle"].append(np.arange(start + minute, end - minute + 1))
            chosen = []
            for region in ("start", "middle", "end"):
                pool = np.concatenate(regions[region]) if regions[region] else np.array([], dtype=np.int64)
                # Short activities have overlapping regions; a step is drawn at most once.
                pool = np.setdiff1d(pool[pool >= window], chosen)
                chosen += _draw(rng, pool, per_region)
            wanted = 3 * per_region

        if not chosen:
            logger.warning("Class %s absent from the split (after the warm-up window); no samples", name)
        elif len(chosen) < wanted:
            logger.warning("Class %s: only %d of %d samples available", name, len(chosen), wanted)
        samples += [EvalSample(split, t, label) for t in chosen]

    return samples
