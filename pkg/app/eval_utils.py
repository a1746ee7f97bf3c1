# eval_utils.py - Explanation quality: selectivity, output-completeness, max-sensitivity, compactness.

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from tqdm import tqdm

from attribution_utils import AttributionMap, DecayParams, Variant, class_slice, explain
from dataset_utils import EvalSample, LabeledSeries, runs_of_ones
from snn_utils import Network, SimulationTrace, forward, predict, simulate_batch
from train_utils import balanced_accuracy, confidence_interval

logger = logging.getLogger(__name__)

METRICS = ("selectivity", "output-completeness", "max-sensitivity", "compactness")
GRID_POINTS = 101
RANK_CHUNK = 256

# Called as explainer(network, x, t, trace=None); a trace of x, when given, is reused.
ExplainerFn = Callable[..., AttributionMap]


class EvaluationError(ValueError):
    """Raised for empty sample lists and unknown method or metric names."""


class Sign(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ZERO = "zero"


@dataclass(frozen=True)
class FeatureSegment:
    dim: int
    start: int
    end: int
    sign: Sign
    mean_attr: float

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class EvalConfig:
    window: int = 1000
    max_segment_seconds: float = 10.0
    epsilon: float = 0.0
    continuity_radius_pct: float = 10.0
    n_perturbations: int = 5
    seed: int = 7
    dt_seconds: float = 1.0

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 < self.continuity_radius_pct <= 100:
            raise ValueError(f"continuity_radius_pct must lie in (0, 100], got {self.continuity_radius_pct}")
        if self.max_segment_seconds <= 0 or self.dt_seconds <= 0:
            raise ValueError("max_segment_seconds and dt_seconds must be positive")
        if self.n_perturbations < 0:
            raise ValueError(f"n_perturbations must be non-negative, got {self.n_perturbations}")

    @property
    def max_segment_steps(self) -> int:
        return max(1, int(math.floor(self.max_segment_seconds / self.dt_seconds + 1e-9)))


@dataclass(frozen=True)
class Explainer:
    """Named explanation method bound to a decay rate (network rate when omitted)."""
    name: str
    decay: Optional[DecayParams] = None

    def __call__(self, network: Network, x: np.ndarray, t: int,
                 trace: Optional[SimulationTrace] = None) -> AttributionMap:
        return explain(network, x, self.name, t, self.decay, trace=trace)


def make_explainer(name: str, decay: Optional[DecayParams] = None) -> Explainer:
    return Explainer(Variant.parse(name).value, decay)


def config_for_series(cfg: EvalConfig, series: LabeledSeries) -> EvalConfig:
    """cfg on the series' own step length, so segment limits in seconds become the right step count."""
    return replace(cfg, dt_seconds=series.dt_seconds)


@dataclass
class _Explained:
    """One evaluation sample with its window, prediction and predicted-class attribution."""
    sample: EvalSample
    x: np.ndarray
    prediction: int
    attribution: np.ndarray


# Segments and perturbations
def _sign(values: np.ndarray, epsilon: float) -> np.ndarray:
    return np.where(values > epsilon, 1, np.where(values < -epsilon, -1, 0))


def segment_map(attr: np.ndarray, cfg: EvalConfig) -> List[FeatureSegment]:
    """Maximal same-sign runs per dimension, chunked to at most max_segment_steps; tiles the map."""
    attr = np.asarray(attr, dtype=np.float64)
    limit = cfg.max_segment_steps
    signs = {1: Sign.POSITIVE, -1: Sign.NEGATIVE, 0: Sign.ZERO}
    segments = []
    for dim, row in enumerate(attr):
        labels = _sign(row, cfg.epsilon)
        boundaries = np.flatnonzero(np.diff(labels)) + 1
        for run_start, run_stop in zip(np.concatenate([[0], boundaries]),
                                       np.concatenate([boundaries, [row.size]])):
            for start in range(int(run_start), int(run_stop), limit):
                end = min(start + limit, int(run_stop)) - 1
                segments.append(FeatureSegment(dim, start, end, signs[int(labels[start])],
                                               float(row[start:end + 1].mean())))
    return segments


def invert_segment(x: np.ndarray, seg: FeatureSegment) -> np.ndarray:
    """Copy of x with the segment's bits flipped."""
    if not (0 <= seg.dim < x.shape[0] and 0 <= seg.start <= seg.end < x.shape[1]):
        raise IndexError(f"segment {seg} outside input of shape {x.shape}")
    flipped = np.array(x, copy=True)
    flipped[seg.dim, seg.start:seg.end + 1] = 1 - flipped[seg.dim, seg.start:seg.end + 1]
    return flipped


def perturb_durations(x: np.ndarray, pct: float, seed: Union[int, np.random.Generator, None],
                      bias_dim: Optional[int] = None) -> np.ndarray:
    """Lengthen or shorten every run of 1s by up to pct% of its length, keeping runs separate."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x)
    perturbed = np.array(x, copy=True)
    steps = x.shape[1]
    for dim in range(x.shape[0]):
        if dim == bias_dim:
            continue
        runs = runs_of_ones(x[dim])
        if not runs:
            continue
        row = np.zeros(steps, dtype=x.dtype)
        for index, (start, end) in enumerate(runs):
            reach = int(math.floor(pct / 100.0 * (end - start + 1)))
            delta = int(rng.integers(-reach, reach + 1)) if reach > 0 else 0
            # One silent step must remain before the next run.
            limit = runs[index + 1][0] - 2 if index + 1 < len(runs) else steps - 1
            new_end = min(max(end + delta, start), limit)
            row[start:new_end + 1] = 1
        perturbed[dim] = row
    return perturbed


# Shared evaluation helpers
def _require_samples(samples: Sequence[EvalSample]) -> None:
    if not samples:
        raise EvaluationError("evaluation needs at least one sample")


def _predict_last(network: Network, x: np.ndarray) -> int:
    trace = forward(network, x)
    return predict(trace, trace.n_steps - 1)


def _explain_samples(model: Network, explainer: ExplainerFn, samples: Sequence[EvalSample],
                     cfg: EvalConfig, desc: str = "explain") -> List[_Explained]:
    items = []
    for sample in tqdm(samples, desc=desc, unit="sample", leave=False):
        x = sample.window(cfg.window)
        trace = forward(model, x)
        prediction = predict(trace, trace.n_steps - 1)
        attribution = class_slice(explainer(model, x, cfg.window, trace=trace), prediction)
        items.append(_Explained(sample, x, prediction, attribution))
    return items


def _n_classes(model: Network, samples: Sequence[EvalSample]) -> int:
    return max(model.n_classes, max(sample.true_label for sample in samples) + 1)


def _rank_predictions(model: Network, item: _Explained, cfg: EvalConfig,
                      bias_dim: Optional[int]) -> np.ndarray:
    """Predictions after inverting the top 0, 1, ..., R signed segments, cumulatively."""
    segments = [seg for seg in segment_map(item.attribution, cfg)
                if seg.sign is not Sign.ZERO and seg.dim != bias_dim]
    # Stable sort keeps map order among equal means.
    segments.sort(key=lambda seg: -seg.mean_attr)

    def cumulative() -> Iterator[np.ndarray]:
        current = item.x
        yield current
        for seg in segments:
            current = invert_segment(current, seg)
            yield current

    predictions = []
    batch: List[np.ndarray] = []
    for xs in cumulative():
        batch.append(xs)
        if len(batch) == RANK_CHUNK:
            predictions.append(_predict_batch(model, batch))
            batch = []
    if batch:
        predictions.append(_predict_batch(model, batch))
    return np.concatenate(predictions)


def _predict_batch(model: Network, xs: List[np.ndarray]) -> np.ndarray:
    trace = simulate_batch(model, np.stack(xs), record_spikes=False)
    return np.argmax(trace.out_potentials[:, :, -1], axis=1)


def inversion_budget(grid: np.ndarray, ranks: int) -> np.ndarray:
    """Segments inverted at each grid fraction g: ceil(g * R), so any positive fraction inverts the top one."""
    index = np.ceil(np.asarray(grid) * ranks - 1e-9).astype(int)
    return np.clip(index, 0, ranks)


def selectivity_curve(model: Network, items: Sequence[_Explained], cfg: EvalConfig,
                      bias_dim: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Balanced accuracy against the fraction of signed segments inverted, on a 101-point grid."""
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    curves = np.empty((len(items), GRID_POINTS), dtype=np.int64)
    for row, item in enumerate(tqdm(items, desc="selectivity", unit="sample", leave=False)):
        predictions = _rank_predictions(model, item, cfg, bias_dim)
        curves[row] = predictions[inversion_budget(grid, len(predictions) - 1)]

    truth = np.array([item.sample.true_label for item in items])
    n_classes = _n_classes(model, [item.sample for item in items])
    scores = np.array([balanced_accuracy(curves[:, column], truth, n_classes) for column in range(GRID_POINTS)])
    return grid, scores


def _selectivity(model: Network, items: Sequence[_Explained], cfg: EvalConfig,
                 bias_dim: Optional[int]) -> float:
    grid, scores = selectivity_curve(model, items, cfg, bias_dim)
    return float(np.trapezoid(scores, grid))


def shuffle_unattributed(x: np.ndarray, attr: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Copy of x with each row permuted in time across the steps whose attribution is zero."""
    shuffled = np.array(x, copy=True)
    silent = _sign(np.asarray(attr), epsilon) == 0
    for dim in range(shuffled.shape[0]):
        steps = np.flatnonzero(silent[dim])
        if steps.size > 1:
            shuffled[dim, steps] = rng.permutation(x[dim, steps])
    return shuffled


def _output_completeness(model: Network, items: Sequence[_Explained], cfg: EvalConfig,
                         rng: np.random.Generator) -> float:
    original, perturbed = [], []
    for item in items:
        original.append(item.prediction)
        perturbed.append(_predict_last(model, shuffle_unattributed(item.x, item.attribution, cfg.epsilon, rng)))
    n_classes = _n_classes(model, [item.sample for item in items])
    return balanced_accuracy(perturbed, original, n_classes)


def _max_sensitivity(model: Network, explainer: ExplainerFn, item: _Explained, cfg: EvalConfig,
                     bias_dim: Optional[int]) -> float:
    if cfg.n_perturbations == 0:
        logger.warning("max-sensitivity with zero perturbations is degenerate; returning 0")
        return 0.0
    rng = np.random.default_rng([cfg.seed, item.sample.t])
    worst = 0.0
    for _ in range(cfg.n_perturbations):
        x_perturbed = perturb_durations(item.x, cfg.continuity_radius_pct, rng, bias_dim)
        attribution = class_slice(explainer(model, x_perturbed, cfg.window), item.prediction)
        worst = max(worst, float(np.linalg.norm(attribution - item.attribution)))
    return worst


# Public metrics
def selectivity(model: Network, explainer: ExplainerFn, samples: Sequence[EvalSample], cfg: EvalConfig,
                bias_dim: Optional[int] = None) -> float:
    """AUC of balanced accuracy while top-ranked signed segments are inverted; lower is better."""
    _require_samples(samples)
    return _selectivity(model, _explain_samples(model, explainer, samples, cfg), cfg, bias_dim)


def output_completeness(model: Network, explainer: ExplainerFn, samples: Sequence[EvalSample],
                        cfg: EvalConfig, seed: Optional[int] = None) -> float:
    """Balanced accuracy of predictions after shuffling zero-attribution steps in time; higher is better."""
    _require_samples(samples)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return _output_completeness(model, _explain_samples(model, explainer, samples, cfg), cfg, rng)


def max_sensitivity(model: Network, explainer: ExplainerFn, sample: EvalSample, cfg: EvalConfig,
                    bias_dim: Optional[int] = None) -> float:
    """Largest Frobenius change of the predicted-class map over sampled duration perturbations."""
    item = _explain_samples(model, explainer, [sample], cfg)[0]
    return _max_sensitivity(model, explainer, item, cfg, bias_dim)


def compactness(maps: Sequence[np.ndarray]) -> float:
    """Mean over maps of the summed absolute attribution."""
    if len(maps) == 0:
        raise EvaluationError("compactness needs at least one map")
    return float(np.mean([np.abs(np.asarray(m)).sum() for m in maps]))


def result_ci(metric: str, value: float, n: int, per_sample: Optional[Sequence[float]] = None) -> Optional[float]:
    """95% half-width for one result row; continuity rows carry none."""
    if metric in ("selectivity", "output-completeness"):
        return confidence_interval(min(max(value, 0.0), 1.0), n)
    if metric == "compactness":
        if per_sample is None or len(per_sample) < 2:
            return 0.0
        return 1.96 * float(np.std(per_sample, ddof=1)) / math.sqrt(len(per_sample))
    return None


def run_evaluation(model: Network, series: LabeledSeries, samples: Sequence[EvalSample],
                   methods: Sequence[str], metrics: Sequence[str], cfg: EvalConfig,
                   model_name: str = "SNN", dataset_name: str = "synthetic") -> List[Dict[str, object]]:
    """Every requested metric for every method as result rows (metric, explainer, model, dataset, value, ci, n)."""
    _require_samples(samples)
    unknown = [metric for metric in metrics if metric not in METRICS]
    if unknown:
        raise EvaluationError(f"unknown metrics {unknown}; choose from {list(METRICS)}")
    try:
        explainers = [make_explainer(method) for method in methods]
    except ValueError as exc:
        raise EvaluationError(str(exc)) from exc

    cfg = config_for_series(cfg, series)
    bias_dim = series.bias_dim
    rows: List[Dict[str, object]] = []
    for explainer in explainers:
        logger.info("Evaluating %s on %d samples", explainer.name, len(samples))
        items = _explain_samples(model, explainer, samples, cfg, desc=explainer.name)
        n = len(items)
        for metric in metrics:
            per_sample = None
            if metric == "selectivity":
                value = _selectivity(model, items, cfg, bias_dim)
            elif metric == "output-completeness":
                value = _output_completeness(model, items, cfg, np.random.default_rng(cfg.seed))
            elif metric == "max-sensitivity":
                value = float(np.mean([_max_sensitivity(model, explainer, item, cfg, bias_dim)
                                       for item in tqdm(items, desc="continuity", unit="sample", leave=False)]))
            else:
                per_sample = [float(np.abs(item.attribution).sum()) for item in items]
                value = compactness([item.attribution for item in items])
            rows.append({"metric": metric, "explainer": explainer.name, "model": model_name,
                         "dataset": dataset_name, "value": value,
                         "ci": result_ci(metric, value, n, per_sample), "n": n})
            logger.info("%s / %s: %.4f", metric, explainer.name, value)
    return rows
