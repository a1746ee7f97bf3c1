# train_utils.py - Surrogate-gradient BPTT training and classification metrics.

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import math
import warnings

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import log_softmax
from sklearn.metrics import balanced_accuracy_score
from tqdm import tqdm

from snn_utils import DimensionError, LifConfig, Network, NeuronState, NumericBlowupError, iter_series
from dataset_utils import LabeledSeries

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    surrogate_slope: float = 100.0
    seed: int = 7
    window_len: int = 1000
    optimizer: str = "sgd"
    progress: bool = True

    def __post_init__(self) -> None:
        # A zero learning rate is accepted: it yields a frozen run.
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be a non-negative number, got {self.learning_rate}")
        for name in ("batch_size", "max_epochs", "patience", "window_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.surrogate_slope <= 0:
            raise ValueError(f"surrogate_slope must be positive, got {self.surrogate_slope}")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_balanced_accuracy: float
    val_loss: Optional[float] = None
    val_balanced_accuracy: Optional[float] = None


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    selected_epoch: int = 0
    monitored: str = "train_loss"
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": [asdict(record) for record in self.epochs],
            "selected_epoch": self.selected_epoch,
            "monitored": self.monitored,
            "stopped_early": self.stopped_early,
        }


@dataclass
class SplitMetrics:
    loss: float
    balanced_accuracy: float
    ci: float
    n: int


# Spike nonlinearity
def surrogate_spike_grad(v: float, slope: float) -> float:
    """Fast-sigmoid surrogate derivative 1 / (1 + slope*|v|)^2 of the spike step."""
    if slope <= 0:
        raise ValueError(f"slope must be positive, got {slope}")
    return 1.0 / (1.0 + slope * abs(v)) ** 2


class SurrGradSpike(torch.autograd.Function):
    """Hard step in the forward pass, fast-sigmoid surrogate in the backward pass."""

    @staticmethod
    def forward(ctx, v, slope):
        ctx.save_for_backward(v)
        ctx.slope = slope
        return (v > 0).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (v,) = ctx.saved_tensors
        return grad_output / (ctx.slope * torch.abs(v) + 1.0) ** 2, None


def smooth_spike(v: torch.Tensor, slope: float) -> torch.Tensor:
    """Smooth fast-sigmoid relaxation of the step; its derivative is 0.5 * surrogate."""
    return 0.5 + 0.5 * slope * v / (1.0 + slope * torch.abs(v))


def simulate_torch(weights: Sequence[torch.Tensor], x: torch.Tensor, state: List[Tuple[torch.Tensor, torch.Tensor]],
                   config: LifConfig, slope: float, smooth: bool = False
                   ) -> Tuple[torch.Tensor, List[Tuple[torch.Tensor, torch.Tensor]]]:
    """Differentiable twin of snn_utils.simulate_batch; x is (B, D, T), returns U as (B, O, T)."""
    alpha, beta = config.alpha, config.beta
    last = len(weights) - 1
    potentials = []

    for n in range(x.shape[2]):
        spikes = x[:, :, n]
        new_state = []
        for index, weight in enumerate(weights):
            syn, mem = state[index]
            new_syn = alpha * syn + spikes @ weight
            new_mem = config.u_rest + beta * (mem - config.u_rest) + syn
            if index < last:
                v = new_mem - config.theta
                spikes = smooth_spike(v, slope) if smooth else SurrGradSpike.apply(v, slope)
                # Reset is not differentiated through in the surrogate path.
                reset = spikes if smooth else spikes.detach()
                new_mem = new_mem * (1.0 - reset) + config.u_reset * reset
            new_state.append((new_syn, new_mem))
        state = new_state
        potentials.append(state[last][1])

    return torch.stack(potentials, dim=2), state


def _zero_torch_state(network: Network, batch: int) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    return [(torch.zeros(batch, size, dtype=torch.float64), torch.zeros(batch, size, dtype=torch.float64))
            for size in network.layer_sizes[1:]]


def _state_to_torch(state: NeuronState) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    return [(torch.as_tensor(np.atleast_2d(layer.syn), dtype=torch.float64),
             torch.as_tensor(np.atleast_2d(layer.mem), dtype=torch.float64)) for layer in state.layers]


def sequence_loss(network: Network, x: np.ndarray, labels: np.ndarray,
                  initial: Optional[NeuronState] = None) -> float:
    """Mean per-step NLL of softmax(U^(L)) against labels for one window (D x T)."""
    weights = [torch.as_tensor(w, dtype=torch.float64) for w in network.weights]
    xs = torch.as_tensor(np.asarray(x, dtype=np.float64)[None])
    state = _zero_torch_state(network, 1) if initial is None else _state_to_torch(initial)
    with torch.no_grad():
        potentials, _ = simulate_torch(weights, xs, state, network.config, slope=1.0)
        targets = torch.as_tensor(np.asarray(labels, dtype=np.int64)[None])
        return float(F.nll_loss(F.log_softmax(potentials, dim=1), targets))


# Metrics
def balanced_accuracy(pred: Sequence[int], truth: Sequence[int], n_classes: int) -> float:
    """Mean per-class recall over the classes present in truth."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.size == 0 or truth.size == 0:
        raise ValueError("balanced accuracy of an empty sequence is undefined")
    if pred.shape != truth.shape:
        raise ValueError(f"pred and truth differ in length: {pred.shape} vs {truth.shape}")
    for name, values in (("pred", pred), ("truth", truth)):
        if values.min() < 0 or values.max() >= n_classes:
            raise ValueError(f"{name} holds labels outside [0, {n_classes})")

    with warnings.catch_warnings():
        # sklearn warns when pred contains classes absent from truth; those are ignored by definition.
        warnings.simplefilter("ignore", UserWarning)
        return float(balanced_accuracy_score(truth, pred))


def confidence_interval(ba: float, n: int) -> float:
    """95% normal-approximation half-width 1.96 * sqrt(ba * (1 - ba) / n)."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    return 1.96 * math.sqrt(max(ba * (1.0 - ba), 0.0) / n)


def majority_class(labels: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)))


def majority_baseline(train: LabeledSeries, test: LabeledSeries) -> float:
    """Balanced accuracy on test of always predicting the most frequent training class."""
    constant = majority_class(train.labels, train.n_classes)
    return balanced_accuracy(np.full(test.n_steps, constant), test.labels, test.n_classes)


def evaluate_split(network: Network, series: LabeledSeries, chunk_len: int = 10_000) -> SplitMetrics:
    """Loss, balanced accuracy and its 95% CI for a network over one split with state retention."""
    if series.n_channels != network.n_inputs:
        raise DimensionError(f"series has {series.n_channels} channels, network expects {network.n_inputs}")

    predictions = np.empty(series.n_steps, dtype=np.int64)
    total_nll = 0.0
    for start, potentials in iter_series(network, series.data, chunk_len=chunk_len):
        stop = start + potentials.shape[1]
        log_probs = log_softmax(potentials, axis=0)
        total_nll -= float(log_probs[series.labels[start:stop], np.arange(stop - start)].sum())
        predictions[start:stop] = np.argmax(potentials, axis=0)

    ba = balanced_accuracy(predictions, series.labels, series.n_classes)
    return SplitMetrics(total_nll / series.n_steps, ba, confidence_interval(ba, series.n_steps), series.n_steps)


# Training
def _batchify(series: LabeledSeries, batch_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Cut the series into batch_size contiguous streams that are stepped in parallel."""
    n_streams = max(1, min(batch_size, series.n_steps))
    stream_len = series.n_steps // n_streams
    used = n_streams * stream_len
    if used < series.n_steps:
        logger.debug("Dropping %d trailing steps to form %d streams", series.n_steps - used, n_streams)

    data = series.data[:, :used].astype(np.float64)
    x = data.reshape(series.n_channels, n_streams, stream_len).transpose(1, 0, 2)
    y = series.labels[:used].reshape(n_streams, stream_len)
    return torch.as_tensor(np.ascontiguousarray(x)), torch.as_tensor(np.ascontiguousarray(y))


def _make_optimizer(parameters: List[torch.Tensor], cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(parameters, lr=cfg.learning_rate)
    return torch.optim.SGD(parameters, lr=cfg.learning_rate)


def _run_epoch(network: Network, weights: List[torch.Tensor], x: torch.Tensor, y: torch.Tensor,
               cfg: TrainConfig, optimizer: torch.optim.Optimizer) -> Tuple[float, float]:
    """One pass over the streams window by window; state (not gradients) crosses windows."""
    state = _zero_torch_state(network, x.shape[0])
    total_loss, total_steps = 0.0, 0
    predictions = []

    for start in range(0, x.shape[2], cfg.window_len):
        xw = x[:, :, start:start + cfg.window_len]
        yw = y[:, start:start + cfg.window_len]

        optimizer.zero_grad()
        potentials, state = simulate_torch(weights, xw, state, network.config, cfg.surrogate_slope)
        loss = F.nll_loss(F.log_softmax(potentials, dim=1), yw)
        loss.backward()
        optimizer.step()

        state = [(syn.detach(), mem.detach()) for syn, mem in state]
        steps = yw.numel()
        total_loss += loss.item() * steps
        total_steps += steps
        predictions.append(potentials.detach().argmax(dim=1))

    # Windows are (B, w) slices of the (B, L) stream matrix.
    pred = torch.cat(predictions, dim=1).reshape(-1).numpy()
    truth = y.reshape(-1).numpy()
    return total_loss / total_steps, balanced_accuracy(pred, truth, network.n_classes)


def train(network: Network, train_series: LabeledSeries, val_series: Optional[LabeledSeries],
          cfg: TrainConfig) -> Tuple[Network, TrainReport]:
    """Train with BPTT over truncation windows; returns the best network and the per-epoch report."""
    for name, series in (("train", train_series), ("val", val_series)):
        if series is not None and series.n_channels != network.n_inputs:
            raise DimensionError(
                f"{name} series has {series.n_channels} channels, network expects {network.n_inputs}")

    torch.manual_seed(cfg.seed)
    weights = [torch.tensor(np.array(w), dtype=torch.float64, requires_grad=True) for w in network.weights]
    optimizer = _make_optimizer(weights, cfg)
    x, y = _batchify(train_series, cfg.batch_size)
    logger.info("Training %s on %d streams x %d steps (window %d, %s lr=%g)",
                list(network.layer_sizes), x.shape[0], x.shape[2], cfg.window_len,
                cfg.optimizer, cfg.learning_rate)

    report = TrainReport(monitored="val_loss" if val_series is not None else "train_loss")
    best_loss, best_network, stale = math.inf, network, 0

    for epoch in tqdm(range(1, cfg.max_epochs + 1), desc="train", unit="epoch", disable=not cfg.progress):
        train_loss, train_ba = _run_epoch(network, weights, x, y, cfg, optimizer)
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(epoch, train_loss)

        try:
            current = network.with_weights([w.detach().numpy().copy() for w in weights])
        except NumericBlowupError as exc:
            raise TrainingDivergedError(epoch, math.nan) from exc
        record = EpochRecord(epoch, train_loss, train_ba)
        monitored = train_loss
        if val_series is not None:
            val = evaluate_split(current, val_series)
            if not math.isfinite(val.loss):
                raise TrainingDivergedError(epoch, val.loss)
            record.val_loss, record.val_balanced_accuracy = val.loss, val.balanced_accuracy
            monitored = val.loss
        report.epochs.append(record)
        logger.info("Epoch %d: train loss %.5f, train BA %.4f%s", epoch, train_loss, train_ba,
                    f", val loss {record.val_loss:.5f}, val BA {record.val_balanced_accuracy:.4f}"
                    if val_series is not None else "")

        if monitored < best_loss:
            best_loss, best_network, stale = monitored, current, 0
            report.selected_epoch = epoch
        else:
            stale += 1
            if val_series is not None and stale >= cfg.patience:
                logger.info("Early stopping after epoch %d (best epoch %d)", epoch, report.selected_epoch)
                report.stopped_early = True
                break

    return best_network, report
