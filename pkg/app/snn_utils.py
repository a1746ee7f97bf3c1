# snn_utils.py - Discrete-time simulation of fully connected LIF networks.

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when an input, state or weight array has the wrong shape."""


class NumericBlowupError(FloatingPointError):
    """Raised when a non-finite current enters the neuron recurrence."""


@dataclass(frozen=True)
class LifConfig:
    """Per-network neuron constants; times are in seconds, potentials dimensionless."""
    dt: float = 0.001
    tau_syn: float = 0.01
    tau_mem: float = 0.001
    theta: float = 1.0
    u_rest: float = 0.0
    u_reset: float = 0.0

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.tau_syn > 0 and self.tau_mem > 0):
            raise ValueError(f"dt, tau_syn and tau_mem must be positive: {self}")
        if not self.theta > self.u_rest:
            raise ValueError(f"theta ({self.theta}) must exceed u_rest ({self.u_rest})")
        if self.u_reset > self.u_rest:
            raise ValueError(f"u_reset ({self.u_reset}) must not exceed u_rest ({self.u_rest})")

    @property
    def alpha(self) -> float:
        """Synaptic decay factor per step."""
        return math.exp(-self.dt / self.tau_syn)

    @property
    def beta(self) -> float:
        """Membrane decay factor per step."""
        return math.exp(-self.dt / self.tau_mem)

    @property
    def gamma(self) -> float:
        """Per-step decay rate of the contribution kernel, so that exp(-gamma) == beta."""
        return self.dt / self.tau_mem

    def to_dict(self) -> Dict[str, float]:
        return {"dt": self.dt, "tau_syn": self.tau_syn, "tau_mem": self.tau_mem,
                "theta": self.theta, "u_rest": self.u_rest, "u_reset": self.u_reset}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "LifConfig":
        return cls(**{key: float(value) for key, value in values.items()})


@dataclass(frozen=True)
class Network:
    """Layer sizes [D, H1, ..., O] plus the dense weight matrices between them."""
    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    config: LifConfig = field(default_factory=LifConfig)

    def __post_init__(self) -> None:
        sizes = tuple(int(size) for size in self.layer_sizes)
        if len(sizes) < 2 or any(size < 1 for size in sizes):
            raise DimensionError(f"layer_sizes must hold at least two positive sizes, got {sizes}")
        if len(self.weights) != len(sizes) - 1:
            raise DimensionError(f"expected {len(sizes) - 1} weight matrices, got {len(self.weights)}")

        frozen = []
        for index, weight in enumerate(self.weights):
            matrix = np.array(weight, dtype=np.float64)
            expected = (sizes[index], sizes[index + 1])
            if matrix.shape != expected:
                raise DimensionError(f"weights[{index}] has shape {matrix.shape}, expected {expected}")
            if not np.all(np.isfinite(matrix)):
                raise NumericBlowupError(f"weights[{index}] contains non-finite entries")
            matrix.setflags(write=False)
            frozen.append(matrix)

        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(frozen))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return self.layer_sizes[1:-1]

    def with_weights(self, weights: Sequence[np.ndarray]) -> "Network":
        """Return a copy of this network carrying new weight matrices."""
        return Network(self.layer_sizes, tuple(weights), self.config)


@dataclass
class LayerState:
    """Synaptic current and membrane potential of one non-input layer."""
    syn: np.ndarray
    mem: np.ndarray

    def copy(self) -> "LayerState":
        return LayerState(self.syn.copy(), self.mem.copy())


@dataclass
class NeuronState:
    """One LayerState per non-input layer; retained between consecutive windows."""
    layers: List[LayerState]

    def copy(self) -> "NeuronState":
        return NeuronState([layer.copy() for layer in self.layers])


@dataclass
class SimulationTrace:
    """Spike trains of the input and hidden layers plus the readout potentials."""
    spikes: List[np.ndarray]          # [x, S^(1), ..., S^(L-2)], each layer_size x T
    out_potentials: np.ndarray        # O x T
    final_state: NeuronState

    @property
    def n_steps(self) -> int:
        return self.out_potentials.shape[1]


@dataclass
class BatchTrace:
    """Same content as SimulationTrace with a leading batch axis on every array."""
    spikes: List[np.ndarray]
    out_potentials: np.ndarray
    final_state: NeuronState


def init_network(layer_sizes: Sequence[int], config: Optional[LifConfig] = None,
                 seed: int = 0, weight_scale: float = 1.0) -> Network:
    """Zero-mean Gaussian weights scaled by 1/sqrt(fan-in), drawn from a fixed seed."""
    rng = np.random.default_rng(seed)
    weights = [
        rng.normal(0.0, weight_scale / math.sqrt(fan_in), size=(fan_in, fan_out))
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])
    ]
    return Network(tuple(layer_sizes), tuple(weights), config or LifConfig())


def zero_state(network: Network, batch: Optional[int] = None) -> NeuronState:
    """Rest state (all zeros) for every non-input layer."""
    shape = (lambda size: (size,)) if batch is None else (lambda size: (batch, size))
    return NeuronState([
        LayerState(np.zeros(shape(size)), np.zeros(shape(size)))
        for size in network.layer_sizes[1:]
    ])


def lif_step(state: LayerState, input_current: np.ndarray, config: LifConfig,
             spiking: bool = True) -> Tuple[LayerState, np.ndarray]:
    """Advance one layer by one step; readout layers (spiking=False) never fire or reset."""
    current = np.asarray(input_current, dtype=np.float64)
    if current.shape != state.syn.shape or state.syn.shape != state.mem.shape:
        raise DimensionError(
            f"input current {current.shape} does not match state {state.syn.shape}/{state.mem.shape}")
    if not np.all(np.isfinite(current)):
        raise NumericBlowupError("non-finite input current")

    syn = config.alpha * state.syn + current
    mem = config.u_rest + config.beta * (state.mem - config.u_rest) + state.syn
    if not spiking:
        return LayerState(syn, mem), np.zeros_like(mem)

    spikes = (mem > config.theta).astype(np.float64)
    mem = np.where(spikes > 0, config.u_reset, mem)
    return LayerState(syn, mem), spikes


def _check_binary(x: np.ndarray) -> None:
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("input spike trains must be binary")


def _broadcast_state(network: Network, initial: Optional[NeuronState], batch: int) -> NeuronState:
    if initial is None:
        return zero_state(network, batch)
    if len(initial.layers) != len(network.layer_sizes) - 1:
        raise DimensionError(
            f"initial state has {len(initial.layers)} layers, network needs {len(network.layer_sizes) - 1}")

    layers = []
    for size, layer in zip(network.layer_sizes[1:], initial.layers):
        if layer.syn.shape[-1] != size or layer.mem.shape[-1] != size:
            raise DimensionError(f"initial state layer of size {layer.syn.shape[-1]}, expected {size}")
        layers.append(LayerState(
            np.array(np.broadcast_to(layer.syn, (batch, size)), dtype=np.float64),
            np.array(np.broadcast_to(layer.mem, (batch, size)), dtype=np.float64),
        ))
    return NeuronState(layers)


def simulate_batch(network: Network, xs: np.ndarray, initial: Optional[NeuronState] = None,
                   record_spikes: bool = True) -> BatchTrace:
    """Run the recurrence over a batch of input windows shaped (B, D, T)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[1] != network.n_inputs:
        raise DimensionError(f"expected input of shape (B, {network.n_inputs}, T), got {xs.shape}")
    _check_binary(xs)

    batch, _, steps = xs.shape
    state = _broadcast_state(network, initial, batch)
    layers = state.layers
    config = network.config
    last = len(network.weights) - 1

    hidden = [np.zeros((batch, size, steps)) for size in network.hidden_sizes] if record_spikes else []
    out = np.zeros((batch, network.n_classes, steps))

    for n in range(steps):
        spikes = xs[:, :, n]
        for index, weight in enumerate(network.weights):
            layers[index], spikes = lif_step(layers[index], spikes @ weight, config,
                                             spiking=index < last)
            if record_spikes and index < last:
                hidden[index][:, :, n] = spikes
        out[:, :, n] = layers[last].mem

    return BatchTrace([xs] + hidden, out, NeuronState(layers))


def forward(network: Network, x: np.ndarray, initial: Optional[NeuronState] = None) -> SimulationTrace:
    """Simulate one input window x (D x T) from the given state (rest state if omitted)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != network.n_inputs:
        raise DimensionError(f"expected input of shape ({network.n_inputs}, T), got {x.shape}")

    batch = simulate_batch(network, x[None, :, :], initial)
    final = NeuronState([LayerState(layer.syn[0], layer.mem[0]) for layer in batch.final_state.layers])
    return SimulationTrace([spikes[0] for spikes in batch.spikes], batch.out_potentials[0], final)


def predict(trace: SimulationTrace, t: int) -> int:
    """Class with the largest readout potential at step t; ties go to the lowest index."""
    if not 0 <= t < trace.n_steps:
        raise IndexError(f"step {t} outside trace of {trace.n_steps} steps")
    return int(np.argmax(trace.out_potentials[:, t]))


def iter_series(network: Network, data: np.ndarray, initial: Optional[NeuronState] = None,
                chunk_len: int = 10_000) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (start, out_potentials chunk) over a long series, carrying state across chunks."""
    state = initial
    total = data.shape[1]
    for start in range(0, total, chunk_len):
        chunk = data[None, :, start:start + chunk_len]
        batch = simulate_batch(network, chunk, state, record_spikes=False)
        state = batch.final_state
        yield start, batch.out_potentials[0]


def predict_series(network: Network, data: np.ndarray, initial: Optional[NeuronState] = None,
                   chunk_len: int = 10_000) -> np.ndarray:
    """Per-step predictions over a full series with state retention."""
    predictions = np.empty(data.shape[1], dtype=np.int64)
    for start, potentials in iter_series(network, data, initial, chunk_len):
        predictions[start:start + potentials.shape[1]] = np.argmax(potentials, axis=0)
    return predictions
