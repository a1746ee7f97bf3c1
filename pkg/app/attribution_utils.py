# attribution_utils.py - Temporal Spike Attribution (TSA-S, TSA-NS) and the SAM baseline.

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union
import logging

import numpy as np
from scipy.special import softmax as _softmax

from snn_utils import DimensionError, LifConfig, Network, NeuronState, SimulationTrace, forward

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    TSA_S = "tsa-s"
    TSA_NS = "tsa-ns"
    SAM = "sam"

    @classmethod
    def parse(cls, name: Union[str, "Variant"]) -> "Variant":
        try:
            return cls(str(getattr(name, "value", name)).lower().replace("_", "-"))
        except ValueError:
            raise ValueError(f"unknown explanation method {name!r}; choose from "
                             f"{[variant.value for variant in cls]}") from None


@dataclass(frozen=True)
class DecayParams:
    """Per-step decay rate gamma of the contribution kernel exp(-gamma * (t - t'))."""
    gamma: float

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def from_config(cls, config: LifConfig) -> "DecayParams":
        """Kernel decaying at the membrane rate: exp(-gamma) == beta."""
        return cls(config.gamma)


@dataclass
class AttributionMap:
    """Class x input-dimension x window-step attribution scores."""
    values: np.ndarray
    t_explained: int
    variant: Variant
    window_start: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.variant = Variant.parse(self.variant)
        if self.values.ndim != 3:
            raise DimensionError(f"attribution values must be O x D x T, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attribution values must be finite")

    @property
    def n_classes(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[2]


def softmax(potentials: np.ndarray) -> np.ndarray:
    """Class probabilities P(t) from readout potentials shaped O x T."""
    return _softmax(np.asarray(potentials, dtype=np.float64), axis=0)


# Spike time components
KERNEL_FLOOR = np.finfo(np.float64).tiny


def _kernel(t: int, gamma: float) -> np.ndarray:
    """exp(-gamma * (t - t')) for t' = 0..t; terms below the smallest normal float are exactly zero."""
    kernel = np.exp(-gamma * (t - np.arange(t + 1)))
    kernel[kernel < KERNEL_FLOOR] = 0.0
    return kernel


def _check_step(spike_train: np.ndarray, t: int) -> np.ndarray:
    train = np.asarray(spike_train, dtype=np.float64).ravel()
    if not 0 <= t < train.size:
        raise IndexError(f"step {t} outside window of {train.size} steps")
    return train[:t + 1]


def spike_component_s(spike_train: np.ndarray, t: int, gamma: float) -> float:
    """Decayed sum over spiking steps t' <= t of exp(-gamma * (t - t'))."""
    train = _check_step(spike_train, t)
    return float(np.sum(_kernel(t, gamma)[train > 0]))


def spike_component_ns(spike_train: np.ndarray, t: int, gamma: float, B: int) -> float:
    """As spike_component_s, with silent steps contributing -(1/B) of the kernel."""
    if B < 1:
        raise ValueError(f"layer size B must be at least 1, got {B}")
    train = _check_step(spike_train, t)
    contributions = np.where(train > 0, 1.0, -1.0 / B)
    return float(np.sum(_kernel(t, gamma) * contributions))


def component_terms(spikes: np.ndarray, t: int, gamma: float, variant: Variant) -> np.ndarray:
    """Kernel-weighted contribution c(t') * exp(-gamma * (t - t')) of every neuron at every step 0..t.

    Shaped n x (t + 1). Row i sums to the spike time component N_i(t) of the variant, so cell (i, t')
    is the share of step t' in N_i(t): zero for silent steps under TSA-S, and fading with the age t - t'.
    """
    spikes = np.asarray(spikes, dtype=np.float64)
    if not 0 <= t < spikes.shape[1]:
        raise IndexError(f"step {t} outside window of {spikes.shape[1]} steps")
    spikes = spikes[:, :t + 1]
    if variant is Variant.TSA_NS:
        contributions = np.where(spikes > 0, 1.0, -1.0 / spikes.shape[0])
    else:
        contributions = (spikes > 0).astype(np.float64)
    return contributions * _kernel(t, gamma)[None, :]


# Forward attribution pass
def _chain(layer_spikes: Sequence[np.ndarray], matrices: Sequence[np.ndarray], t: int,
           gamma: float, variant: Variant) -> np.ndarray:
    """Per-step products I_D . diag(N^(1)) W^(1) ... diag(N^(L-1)) W^(L-1), shaped (t + 1, D, O)."""
    n_inputs = layer_spikes[0].shape[0]
    steps = t + 1
    chain = np.broadcast_to(np.eye(n_inputs), (steps, n_inputs, n_inputs))
    for index, (spikes, matrix) in enumerate(zip(layer_spikes, matrices)):
        components = component_terms(spikes, t, gamma, variant)
        chain = chain @ (components.T[:, :, None] * matrix[None, :, :])
        assert chain.shape == (steps, n_inputs, matrix.shape[1]), f"chain shape at layer {index}"
    return chain


def _layer_spikes(trace: SimulationTrace, x: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (sizes[0], trace.n_steps):
        raise DimensionError(f"input window {x.shape} does not match trace ({sizes[0]}, {trace.n_steps})")
    layers = [x] + list(trace.spikes[1:])
    if len(layers) != len(sizes) - 1:
        raise DimensionError(f"trace holds {len(layers)} spiking layers, network needs {len(sizes) - 1}")
    for index, (spikes, size) in enumerate(zip(layers, sizes)):
        if spikes.shape != (size, trace.n_steps):
            raise DimensionError(f"layer {index} spikes {spikes.shape}, expected ({size}, {trace.n_steps})")
    if trace.out_potentials.shape[0] != sizes[-1]:
        raise DimensionError(f"trace has {trace.out_potentials.shape[0]} outputs, expected {sizes[-1]}")
    return layers


def tsa(network: Network, trace: SimulationTrace, x: np.ndarray, t: int, variant: Union[str, Variant],
        decay: DecayParams, window_start: int = 0) -> AttributionMap:
    """Temporal Spike Attribution of every class at every window step 0..t."""
    variant = Variant.parse(variant)
    if variant is Variant.SAM:
        raise ValueError("use sam() for the SAM baseline")
    layers = _layer_spikes(trace, x, network.layer_sizes)
    if not 0 <= t < trace.n_steps:
        raise IndexError(f"step {t} outside trace of {trace.n_steps} steps")

    chain = _chain(layers, network.weights, t, decay.gamma, variant)
    probabilities = softmax(trace.out_potentials[:, :t + 1])
    attribution = chain * probabilities.T[:, None, :]
    return AttributionMap(attribution.transpose(2, 1, 0), window_start + t, variant, window_start)


def sam(trace: SimulationTrace, x: np.ndarray, t: int, decay: DecayParams,
        window_start: int = 0) -> AttributionMap:
    """Spike-only baseline: the TSA-S chain with all-ones weights and no softmax factor."""
    sizes = [np.asarray(x).shape[0]] + [spikes.shape[0] for spikes in trace.spikes[1:]]
    sizes.append(trace.out_potentials.shape[0])
    layers = _layer_spikes(trace, x, sizes)
    if not 0 <= t < trace.n_steps:
        raise IndexError(f"step {t} outside trace of {trace.n_steps} steps")

    ones = [np.ones((fan_in, fan_out)) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    chain = _chain(layers, ones, t, decay.gamma, Variant.TSA_S)
    return AttributionMap(chain.transpose(2, 1, 0), window_start + t, Variant.SAM, window_start)


def class_slice(attribution: AttributionMap, label: int) -> np.ndarray:
    """D x T_w attribution of one class."""
    if not 0 <= label < attribution.n_classes:
        raise IndexError(f"class {label} outside [0, {attribution.n_classes})")
    return attribution.values[label]


def stack_slices(slices: Sequence[np.ndarray], t_explained: int, variant: Union[str, Variant],
                 window_start: int = 0) -> AttributionMap:
    """Inverse of class_slice over all classes."""
    return AttributionMap(np.stack([np.asarray(s) for s in slices]), t_explained, variant, window_start)


def explain(network: Network, x: np.ndarray, method: Union[str, Variant], t: Optional[int] = None,
            decay: Optional[DecayParams] = None, initial: Optional[NeuronState] = None,
            window_start: int = 0, trace: Optional[SimulationTrace] = None) -> AttributionMap:
    """Compute the requested explanation at step t (last step by default).

    The window is simulated unless a trace of the same window is passed in.
    """
    variant = Variant.parse(method)
    decay = decay or DecayParams.from_config(network.config)
    if trace is None:
        trace = forward(network, x, initial)
    t = trace.n_steps - 1 if t is None else t
    if variant is Variant.SAM:
        return sam(trace, x, t, decay, window_start)
    return tsa(network, trace, x, t, variant, decay, window_start)
