# io_utils.py - Versioned CSV and JSON persistence for datasets, models, attributions and results.

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple
import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

from attribution_utils import AttributionMap
from dataset_utils import LabeledSeries
from snn_utils import LifConfig, Network

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
RESULT_COLUMNS = ["metric", "explainer", "model", "dataset", "value", "ci", "n"]


class ArtifactError(ValueError):
    """Raised for unknown format versions, failed checksums and inconsistent shapes."""


# Header line shared by every CSV format
def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_csv(path: str, kind: str, metadata: Dict[str, Any], df: pd.DataFrame) -> None:
    _ensure_parent(path)
    header = {"format": kind, "version": FORMAT_VERSION, **metadata}
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# {json.dumps(header, sort_keys=True)}\n")
        df.to_csv(handle, index=False, lineterminator="\n")


def _read_header(handle: TextIO, path: str, kind: str) -> Dict[str, Any]:
    line = handle.readline()
    if not line.startswith("# "):
        raise ArtifactError(f"{path}: missing format header line")
    try:
        header = json.loads(line[2:])
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: unreadable format header ({exc})") from exc
    if header.get("format") != kind:
        raise ArtifactError(f"{path}: expected a {kind} file, found {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported {kind} version {header.get('version')!r}")
    return header


def _read_csv(path: str, kind: str, **kwargs: Any) -> Tuple[Dict[str, Any], pd.DataFrame]:
    with open(path, "r", encoding="utf-8") as handle:
        header = _read_header(handle, path, kind)
        return header, pd.read_csv(handle, **kwargs)


# Datasets
def write_dataset(series: LabeledSeries, path: str) -> None:
    """One row per step: t, every channel (bias last when present), class name."""
    df = pd.DataFrame(series.data.T, columns=series.channel_names)
    df.insert(0, "t", np.arange(series.n_steps))
    df["label"] = np.asarray(series.class_names, dtype=object)[series.labels]
    metadata = {"mode": series.mode, "dt_seconds": series.dt_seconds, "class_names": list(series.class_names),
                "channels": list(series.channel_names), "has_bias": series.has_bias}
    _write_csv(path, "dataset", metadata, df)
    logger.info("Wrote %d steps x %d channels to %s", series.n_steps, series.n_channels, path)


def read_dataset(path: str) -> LabeledSeries:
    header, df = _read_csv(path, "dataset", keep_default_na=False)
    channels = list(header["channels"])
    expected = ["t"] + channels + ["label"]
    if list(df.columns) != expected:
        raise ArtifactError(f"{path}: columns {list(df.columns)} do not match header {expected}")
    if not np.array_equal(df["t"].to_numpy(), np.arange(len(df))):
        raise ArtifactError(f"{path}: step column is not 0..{len(df) - 1}")

    class_names = list(header["class_names"])
    index = {name: i for i, name in enumerate(class_names)}
    unknown = sorted(set(df["label"]) - set(index))
    if unknown:
        raise ArtifactError(f"{path}: labels {unknown} missing from the class list")
    try:
        return LabeledSeries(df[channels].to_numpy().T, df["label"].map(index).to_numpy(), class_names,
                             channels, float(header["dt_seconds"]), bool(header["has_bias"]), header["mode"])
    except ValueError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc


# Attributions
def write_attribution(attribution: AttributionMap, path: str) -> None:
    """Long format rows class,dim,t,value with absolute step numbers."""
    values = attribution.values
    classes, dims, steps = np.meshgrid(np.arange(values.shape[0]), np.arange(values.shape[1]),
                                       np.arange(values.shape[2]), indexing="ij")
    df = pd.DataFrame({"class": classes.ravel(), "dim": dims.ravel(),
                       "t": steps.ravel() + attribution.window_start, "value": values.ravel()})
    metadata = {"variant": attribution.variant.value, "t_explained": attribution.t_explained,
                "window_start": attribution.window_start, "shape": list(values.shape)}
    _write_csv(path, "attribution", metadata, df)


def read_attribution(path: str) -> AttributionMap:
    header, df = _read_csv(path, "attribution", float_precision="round_trip")
    shape = tuple(int(n) for n in header["shape"])
    if len(shape) != 3 or len(df) != int(np.prod(shape)):
        raise ArtifactError(f"{path}: {len(df)} rows do not fill shape {shape}")
    values = np.zeros(shape)
    start = int(header["window_start"])
    try:
        values[df["class"].to_numpy(), df["dim"].to_numpy(), df["t"].to_numpy() - start] = df["value"].to_numpy()
    except IndexError as exc:
        raise ArtifactError(f"{path}: row index outside shape {shape}") from exc
    return AttributionMap(values, int(header["t_explained"]), header["variant"], start)


# Results
def write_results(rows: Sequence[Dict[str, Any]], path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
    df = pd.DataFrame(list(rows), columns=RESULT_COLUMNS)
    _write_csv(path, "results", metadata or {}, df)


def read_results(path: str) -> pd.DataFrame:
    _, df = _read_csv(path, "results", float_precision="round_trip")
    return df


def write_report(report: Dict[str, Any], path: str) -> None:
    """Pretty-printed JSON report with a format_version field."""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"format_version": FORMAT_VERSION, **report}, handle, indent=2, sort_keys=True)
        handle.write("\n")


# Models
@dataclass
class ModelArtifact:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    lif_config: LifConfig
    provenance: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_network(self) -> Network:
        return Network(tuple(self.layer_sizes), tuple(self.weights), self.lif_config)

    def _payload(self) -> Dict[str, Any]:
        # repr() of a float is the shortest string that parses back to the same double.
        return {
            "format_version": self.format_version,
            "layer_sizes": list(self.layer_sizes),
            "weights": [{"shape": list(w.shape), "values": [repr(float(v)) for v in np.ravel(w)]}
                        for w in self.weights],
            "lif_config": self.lif_config.to_dict(),
            "provenance": self.provenance,
        }


def _checksum(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def save_model(network: Network, path: str, provenance: Optional[Dict[str, Any]] = None) -> ModelArtifact:
    """Write a network as checksummed JSON; save, load, save reproduces the file byte for byte."""
    artifact = ModelArtifact(list(network.layer_sizes), list(network.weights), network.config, provenance or {})
    payload = artifact._payload()
    payload["checksum"] = _checksum(payload)
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info("Saved model %s to %s", artifact.layer_sizes, path)
    return artifact


def load_artifact(path: str) -> ModelArtifact:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: corrupt model file ({exc})") from exc

    if payload.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported model version {payload.get('format_version')!r}")
    checksum = payload.pop("checksum", None)
    if checksum != _checksum(payload):
        raise ArtifactError(f"{path}: checksum mismatch")

    sizes = [int(n) for n in payload["layer_sizes"]]
    weights = []
    for index, entry in enumerate(payload["weights"]):
        shape = tuple(int(n) for n in entry["shape"])
        expected = (sizes[index], sizes[index + 1]) if index + 1 < len(sizes) else None
        if shape != expected or len(entry["values"]) != shape[0] * shape[1]:
            raise ArtifactError(f"{path}: weights[{index}] shape {shape} inconsistent with layers {sizes}")
        weights.append(np.array([float(v) for v in entry["values"]], dtype=np.float64).reshape(shape))
    if len(weights) != len(sizes) - 1:
        raise ArtifactError(f"{path}: {len(weights)} weight matrices for {len(sizes)} layers")

    try:
        return ModelArtifact(sizes, weights, LifConfig.from_dict(payload["lif_config"]),
                             payload.get("provenance", {}), payload["format_version"])
    except (TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: invalid neuron configuration ({exc})") from exc


def load_model(path: str) -> Network:
    return load_artifact(path).to_network()
