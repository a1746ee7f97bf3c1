# commands.py - Handlers for the gen-data, train, explain, evaluate and render subcommands.

from argparse import Namespace
from dataclasses import asdict, replace
from typing import Any, Dict, List, Optional, Tuple
import logging
import os

import numpy as np

from attribution_utils import AttributionMap, class_slice, explain
from config import RunConfig
from dataset_utils import LabeledSeries, generate_synthetic, ingest_adl, sample_eval_set, split_sequential
from eval_utils import METRICS, run_evaluation
from io_utils import (load_model, read_attribution, read_dataset, save_model,
                      write_attribution, write_dataset, write_report, write_results)
from render_utils import render_attribution_svg, write_svg
from snn_utils import DimensionError, Network, forward, init_network, predict
from train_utils import evaluate_split, majority_baseline, train

logger = logging.getLogger(__name__)

METHODS = ("tsa-s", "tsa-ns", "sam")


class UsageError(ValueError):
    """Invalid or missing command-line arguments."""


def _output_path(args: Namespace, config: RunConfig, default_name: str) -> str:
    return getattr(args, "output", None) or os.path.join(config.out_dir, default_name)


def _require_file(path: Optional[str], what: str) -> str:
    if not path:
        raise UsageError(f"missing {what} path")
    if not os.path.exists(path):
        raise UsageError(f"{what} {path} does not exist")
    return path


def _check_compatible(network: Network, series: LabeledSeries) -> None:
    if network.n_inputs != series.n_channels or network.n_classes != series.n_classes:
        raise DimensionError(f"model {list(network.layer_sizes)} does not fit dataset with "
                             f"{series.n_channels} channels and {series.n_classes} classes")


def _splits(series: LabeledSeries, config: RunConfig) -> Tuple[LabeledSeries, Optional[LabeledSeries], LabeledSeries]:
    parts = split_sequential(series, config.dataset.split)
    if len(parts) == 3:
        return parts[0], parts[1], parts[2]
    return parts[0], None, parts[1]


def _print_split_bounds(series: LabeledSeries, config: RunConfig) -> None:
    start = 0
    names = ["train", "val", "test"] if len(config.dataset.split) == 3 else ["train", "test"]
    for name, part in zip(names, split_sequential(series, config.dataset.split)):
        print(f"  {name}: steps {start}..{start + part.n_steps - 1} ({part.n_steps})")
        start += part.n_steps


# gen-data
def cmd_gen_data(args: Namespace, config: RunConfig) -> str:
    """Generate (synthetic) or ingest (adl) a dataset and write the canonical CSV."""
    mode = args.mode or config.dataset.mode
    if mode == "synthetic":
        steps = args.steps or config.dataset.steps
        series = generate_synthetic(steps, config.dataset.max_duration, config.dataset.seed)
    elif mode == "adl":
        subject = args.subject or config.dataset.subject
        files = (args.description, args.sensors, args.adls)
        if not all(files[1:]):
            adl_dir = args.adl_dir or config.dataset.adl_dir
            if not adl_dir:
                raise UsageError("adl mode needs --sensors and --adls, or --adl-dir / SPIKEX_ADL_DIR")
            files = replace(config.dataset, adl_dir=adl_dir, subject=subject).adl_files()
        description = files[0] if files[0] and os.path.exists(files[0]) else None
        series = ingest_adl(description, _require_file(files[1], "sensor events file"),
                            _require_file(files[2], "activity labels file"), subject)
    else:
        raise UsageError(f"unknown mode {mode!r}")

    path = _output_path(args, config, f"dataset-{mode}.csv")
    write_dataset(series, path)
    print(f"Wrote {series.n_steps} steps to {path}")
    print(f"Channels ({series.n_channels}): {', '.join(series.channel_names)}")
    counts = np.bincount(series.labels, minlength=series.n_classes)
    print(f"Classes ({series.n_classes}): " + ", ".join(f"{name}={count}" for name, count
                                                        in zip(series.class_names, counts)))
    _print_split_bounds(series, config)
    return path


# train
def cmd_train(args: Namespace, config: RunConfig) -> Dict[str, Any]:
    """Train a network on the dataset's train split; writes the model artifact and a JSON report."""
    series = read_dataset(_require_file(args.dataset, "dataset"))
    train_split, val_split, test_split = _splits(series, config)
    sizes = config.model.layer_sizes(series.n_channels, series.n_classes)
    network = init_network(sizes, config.model.lif, seed=config.train.seed)

    best, report = train(network, train_split, val_split, config.train)
    test = evaluate_split(best, test_split)
    baseline = majority_baseline(train_split, test_split)

    model_name = args.model_name or f"SNN-{len(config.model.hidden_sizes)}L"
    metrics = {"test_loss": test.loss, "test_balanced_accuracy": test.balanced_accuracy, "test_ci": test.ci,
               "test_n": test.n, "majority_baseline": baseline}
    provenance = {"seed": config.train.seed, "preset": config.preset, "epochs": len(report.epochs),
                  "selected_epoch": report.selected_epoch, "dataset": os.path.basename(args.dataset), **metrics}

    model_path = _output_path(args, config, "model.json")
    save_model(best, model_path, provenance)
    result = {"model": model_name, "layer_sizes": sizes, "training": report.to_dict(), "test": metrics,
              "config": {"preset": config.preset, "lif": config.model.lif.to_dict(), "train": asdict(config.train)}}
    report_path = os.path.splitext(model_path)[0] + "-report.json"
    write_report(result, report_path)

    print(f"Model {model_name} {sizes} saved to {model_path}")
    print(f"Selected epoch {report.selected_epoch} of {len(report.epochs)} (monitoring {report.monitored})")
    print(f"Test balanced accuracy {test.balanced_accuracy:.4f} +/- {test.ci:.4f} (n={test.n}); "
          f"majority baseline {baseline:.4f}")
    return result


# explain
def _window(series: LabeledSeries, t: int, window: int) -> np.ndarray:
    if t < window:
        raise ValueError(f"step {t} lies inside the {window}-step warm-up window")
    if t >= series.n_steps:
        raise ValueError(f"step {t} outside dataset of {series.n_steps} steps")
    return series.data[:, t - window:t + 1].astype(np.float64)


def _render(attribution: AttributionMap, x: np.ndarray, series: LabeledSeries,
            label: int, caption: str, path: str) -> None:
    if not 0 <= label < series.n_classes:
        raise UsageError(f"class index {label} outside [0, {series.n_classes})")
    title = f"{caption} class={series.class_names[label]}"
    svg = render_attribution_svg(class_slice(attribution, label), x, series.channel_names, title)
    write_svg(svg, path)
    print(f"Rendered class {series.class_names[label]} to {path}")


def cmd_explain(args: Namespace, config: RunConfig) -> str:
    """Explain the prediction at step t; writes the attribution CSV and, with --render, an SVG."""
    network = load_model(_require_file(args.model, "model"))
    series = read_dataset(_require_file(args.dataset, "dataset"))
    _check_compatible(network, series)
    window = config.eval.window
    x = _window(series, args.t, window)

    attribution = explain(network, x, args.method, window_start=args.t - window)
    path = _output_path(args, config, f"attribution-{attribution.variant.value}-t{args.t}.csv")
    write_attribution(attribution, path)

    trace = forward(network, x)
    predicted = predict(trace, trace.n_steps - 1)
    print(f"Step {args.t}: predicted {series.class_names[predicted]}, "
          f"true {series.class_names[series.labels[args.t]]}; attribution written to {path}")

    if args.render:
        label = predicted if args.class_index is None else args.class_index
        _render(attribution, x, series, label, f"{attribution.variant.value} t={args.t}",
                os.path.splitext(path)[0] + ".svg")
    return path


# evaluate
def cmd_evaluate(args: Namespace, config: RunConfig) -> List[Dict[str, Any]]:
    """Sample the evaluation set from the test split and score every method on every metric."""
    network = load_model(_require_file(args.model, "model"))
    series = read_dataset(_require_file(args.dataset, "dataset"))
    _check_compatible(network, series)
    methods = args.methods or list(METHODS)
    metrics = args.metrics or list(METRICS)

    _, _, test_split = _splits(series, config)
    samples = sample_eval_set(test_split, series.mode, config.eval.seed, window=config.eval.window,
                              per_class=args.per_class)
    print(f"Evaluating {len(methods)} methods x {len(metrics)} metrics on {len(samples)} samples")
    model_name = args.model_name or f"SNN-{len(network.hidden_sizes)}L"
    rows = run_evaluation(network, test_split, samples, methods, metrics, config.eval,
                          model_name=model_name, dataset_name=series.mode)

    path = _output_path(args, config, "results.csv")
    write_results(rows, path, {"seed": config.eval.seed, "samples": len(samples)})
    for row in rows:
        ci = "no CI" if row["ci"] is None else f"+/- {row['ci']:.3f}"
        print(f"{row['metric']:<20} {row['explainer']:<7} {row['value']:.3f} {ci}")
    print(f"Results written to {path}")
    return rows


# render
def cmd_render(args: Namespace, config: RunConfig) -> str:
    """Render an attribution CSV against the dataset window it explains."""
    attribution = read_attribution(_require_file(args.attribution, "attribution"))
    series = read_dataset(_require_file(args.dataset, "dataset"))
    start, stop = attribution.window_start, attribution.window_start + attribution.n_steps
    if attribution.n_dims != series.n_channels or stop > series.n_steps:
        raise DimensionError(f"attribution {attribution.values.shape} does not fit dataset window {start}..{stop}")
    x = series.data[:, start:stop].astype(np.float64)

    if args.class_index is not None:
        label = args.class_index
    elif args.model:
        network = load_model(_require_file(args.model, "model"))
        trace = forward(network, x)
        label = predict(trace, trace.n_steps - 1)
    else:
        raise UsageError("render needs --class or --model to pick the class slice")

    path = _output_path(args, config, os.path.splitext(os.path.basename(args.attribution))[0] + ".svg")
    _render(attribution, x, series, label,
            f"{attribution.variant.value} t={attribution.t_explained}", path)
    return path
