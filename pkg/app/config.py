# config.py - Run configuration: environment defaults, hyperparameter presets and JSON config files.

from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, List, Optional, Tuple
import json
import os

from dotenv import load_dotenv

from eval_utils import EvalConfig
from snn_utils import LifConfig
from train_utils import TrainConfig

# Load environment variables from .env file
load_dotenv(override=True)

MODES = ("synthetic", "adl")


def _safe_int(value: Any, default: int = 0) -> int:
    """Safely convert an environment value to int."""
    if value is None:
        return default
    try:
        return int(value)
    except (ValueError, TypeError):
        return default


def default_out_dir() -> str:
    return os.getenv("SPIKEX_OUT_DIR", "runs")


def default_seed() -> int:
    return _safe_int(os.getenv("SPIKEX_SEED"), 7)


def default_adl_dir() -> Optional[str]:
    return os.getenv("SPIKEX_ADL_DIR") or None


def default_log_level() -> str:
    return os.getenv("SPIKEX_LOG_LEVEL", "INFO").upper()


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from and how it is split into train / (val) / test."""
    mode: str = "synthetic"
    steps: int = 900_000
    max_duration: int = 600
    subject: str = "A"
    adl_dir: Optional[str] = None
    split: Tuple[float, ...] = (0.7, 0.3)
    seed: int = 7

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"dataset mode must be one of {list(MODES)}, got {self.mode!r}")
        if len(self.split) not in (2, 3) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split must be two or three fractions summing to 1, got {self.split}")
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))

    def adl_files(self) -> Tuple[str, str, str]:
        """Description, sensor-event and activity-label files of the configured subject."""
        if not self.adl_dir:
            raise ValueError("ADL mode needs a data directory (--adl-dir or SPIKEX_ADL_DIR)")
        stem = os.path.join(self.adl_dir, f"Ordonez{self.subject}")
        return f"{stem}_Description.txt", f"{stem}_Sensors.txt", f"{stem}_ADLs.txt"


@dataclass(frozen=True)
class ModelSpec:
    hidden_sizes: Tuple[int, ...] = (10,)
    lif: LifConfig = field(default_factory=LifConfig)

    def __post_init__(self) -> None:
        if any(int(size) < 1 for size in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        object.__setattr__(self, "hidden_sizes", tuple(int(size) for size in self.hidden_sizes))

    def layer_sizes(self, n_channels: int, n_classes: int) -> List[int]:
        """[D, H1, ..., O]; n_channels already counts the bias channel."""
        return [n_channels, *self.hidden_sizes, n_classes]


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs"
    preset: str = "synthetic-1l"

    def with_seed(self, seed: int) -> "RunConfig":
        """Apply one seed to every stochastic component."""
        return replace(self, dataset=replace(self.dataset, seed=seed), train=replace(self.train, seed=seed),
                       eval=replace(self.eval, seed=seed))


# Greedy-search hyperparameters per dataset and depth
_SYNTHETIC_LIF = {"dt": 0.001, "tau_syn": 0.01, "tau_mem": 0.001}
_SYNTHETIC_TRAIN = {"learning_rate": 0.001, "batch_size": 128, "optimizer": "adam", "window_len": 100,
                    "max_epochs": 20}
_SYNTHETIC_DATA = {"mode": "synthetic", "split": (0.7, 0.3)}
_ADL_DATA = {"mode": "adl", "split": (0.6, 0.2, 0.2)}

PRESETS: Dict[str, Dict[str, Any]] = {
    "synthetic-1l": {"dataset": _SYNTHETIC_DATA, "model": {"hidden_sizes": (10,), "lif": _SYNTHETIC_LIF},
                     "train": _SYNTHETIC_TRAIN},
    "synthetic-2l": {"dataset": _SYNTHETIC_DATA, "model": {"hidden_sizes": (10, 10), "lif": _SYNTHETIC_LIF},
                     "train": _SYNTHETIC_TRAIN},
    "synthetic-3l": {"dataset": _SYNTHETIC_DATA, "model": {"hidden_sizes": (10, 10, 10), "lif": _SYNTHETIC_LIF},
                     "train": _SYNTHETIC_TRAIN},
    "adl-1l": {"dataset": _ADL_DATA,
               "model": {"hidden_sizes": (100,), "lif": {"dt": 0.001, "tau_syn": 0.01, "tau_mem": 0.01}},
               "train": {"learning_rate": 0.01, "batch_size": 128}},
    "adl-2l": {"dataset": _ADL_DATA,
               "model": {"hidden_sizes": (100, 100), "lif": {"dt": 0.001, "tau_syn": 0.01, "tau_mem": 0.001}},
               "train": {"learning_rate": 0.001, "batch_size": 256}},
    "adl-3l": {"dataset": _ADL_DATA,
               "model": {"hidden_sizes": (100, 50, 25), "lif": {"dt": 0.001, "tau_syn": 0.01, "tau_mem": 0.01}},
               "train": {"learning_rate": 0.001, "batch_size": 512}},
}


def _merge(instance: Any, values: Dict[str, Any], where: str) -> Any:
    """Replace dataclass fields from a dict, recursing into nested dataclasses; unknown keys are errors."""
    known = {f.name: f for f in fields(instance)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")

    updates = {}
    for name, value in values.items():
        current = getattr(instance, name)
        if is_dataclass(current) and isinstance(value, dict):
            updates[name] = _merge(current, value, f"{where}.{name}")
        elif isinstance(value, list):
            updates[name] = tuple(value)
        else:
            updates[name] = value
    return replace(instance, **updates)


def base_config() -> RunConfig:
    """Defaults taken from the environment (.env), before any preset."""
    seed = default_seed()
    config = RunConfig(out_dir=default_out_dir())
    config = replace(config, dataset=replace(config.dataset, adl_dir=default_adl_dir()))
    return config.with_seed(seed)


def preset_config(name: str, base: Optional[RunConfig] = None) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    config = _merge(base or base_config(), PRESETS[name], f"preset {name}")
    return replace(config, preset=name)


def load_run_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """Environment defaults, then the preset, then the JSON file at path."""
    file_values: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file {path} does not exist")
        with open(path, "r", encoding="utf-8") as handle:
            file_values = json.load(handle)
        if not isinstance(file_values, dict):
            raise ValueError(f"config file {path} must hold a JSON object")

    name = preset or file_values.get("preset") or "synthetic-1l"
    config = preset_config(name)
    file_values = {key: value for key, value in file_values.items() if key != "preset"}
    return _merge(config, file_values, path or "config")
