from dataclasses import replace

import numpy as np
import pytest

import attribution_utils
import eval_utils
from attribution_utils import AttributionMap
from dataset_utils import EvalSample, generate_synthetic, runs_of_ones, sample_eval_set, split_sequential
from eval_utils import (GRID_POINTS, METRICS, EvalConfig, EvaluationError, FeatureSegment, Sign, compactness,
                        config_for_series, inversion_budget, invert_segment, make_explainer, max_sensitivity,
                        output_completeness, perturb_durations, result_ci, run_evaluation, segment_map, selectivity,
                        shuffle_unattributed)
from snn_utils import LifConfig, Network, init_network
from train_utils import TrainConfig, confidence_interval, train

SMALL = EvalConfig(window=40, max_segment_seconds=5.0, n_perturbations=2, seed=3)


@pytest.fixture
def eval_samples(small_series):
    return sample_eval_set(small_series, "synthetic", seed=1, window=SMALL.window, per_class=2)


def _constant_network(series):
    """All-zero weights: the readout never moves, so every window is predicted as class 0."""
    sizes = (series.n_channels, 4, series.n_classes)
    weights = (np.zeros((sizes[0], 4)), np.zeros((4, sizes[2])))
    return Network(sizes, weights, LifConfig(dt=0.001, tau_syn=0.01, tau_mem=0.001))


def _fixed_explainer(values):
    """Explainer that ignores its input and returns the same D x T map for every class."""
    def explainer(network, x, t, trace=None):
        return AttributionMap(np.broadcast_to(values, (network.n_classes,) + values.shape), t, "tsa-ns")
    return explainer


def test_segments_tile_the_map(rng):
    attr = rng.normal(size=(3, 47))
    attr[1, 5:30] = 0.0
    segments = segment_map(attr, SMALL)
    covered = np.zeros(attr.shape, dtype=int)
    for seg in segments:
        covered[seg.dim, seg.start:seg.end + 1] += 1
        assert seg.length <= SMALL.max_segment_steps
        values = attr[seg.dim, seg.start:seg.end + 1]
        expected = Sign.POSITIVE if values[0] > 0 else Sign.NEGATIVE if values[0] < 0 else Sign.ZERO
        assert seg.sign is expected
        assert seg.mean_attr == pytest.approx(values.mean())
        assert np.all(np.sign(values) == np.sign(values[0]))
    assert np.all(covered == 1)


def test_segment_epsilon_counts_small_values_as_zero():
    attr = np.array([[0.5, 0.01, -0.01, -0.5]])
    segments = segment_map(attr, EvalConfig(epsilon=0.05))
    assert [seg.sign for seg in segments] == [Sign.POSITIVE, Sign.ZERO, Sign.NEGATIVE]


def test_segments_split_long_runs():
    segments = segment_map(np.ones((1, 23)), EvalConfig(max_segment_seconds=10.0, dt_seconds=1.0))
    assert [(seg.start, seg.end) for seg in segments] == [(0, 9), (10, 19), (20, 22)]


def test_invert_segment_is_an_involution(rng):
    x = (rng.random((3, 20)) < 0.5).astype(float)
    seg = FeatureSegment(1, 4, 11, Sign.POSITIVE, 0.3)
    flipped = invert_segment(x, seg)
    np.testing.assert_array_equal(flipped[1, 4:12], 1 - x[1, 4:12])
    np.testing.assert_array_equal(invert_segment(flipped, seg), x)
    with pytest.raises(IndexError):
        invert_segment(x, FeatureSegment(0, 15, 25, Sign.NEGATIVE, -1.0))


def test_shuffle_conserves_spike_counts(rng):
    x = (rng.random((3, 60)) < 0.5).astype(float)
    attr = rng.normal(size=(3, 60))
    attr[:, 10:50] = 0.0
    shuffled = shuffle_unattributed(x, attr, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(shuffled.sum(axis=1), x.sum(axis=1))
    np.testing.assert_array_equal(shuffled[:, :10], x[:, :10])
    np.testing.assert_array_equal(shuffled[:, 50:], x[:, 50:])


def test_perturb_durations_keeps_runs_apart(rng):
    x = np.zeros((3, 200))
    for start, end in [(5, 40), (43, 90), (120, 199)]:
        x[0, start:end + 1] = 1
    x[1, 60:70] = 1
    x[2] = 1
    for seed in range(25):
        perturbed = perturb_durations(x, 10.0, seed, bias_dim=2)
        np.testing.assert_array_equal(perturbed[2], x[2])
        for dim in (0, 1):
            before, after = runs_of_ones(x[dim]), runs_of_ones(perturbed[dim])
            assert [start for start, _ in after] == [start for start, _ in before]
            for (start, end), (_, new_end) in zip(before, after):
                assert abs(new_end - end) <= int(0.1 * (end - start + 1))


def test_perturb_durations_respects_radius():
    x = np.zeros((1, 500))
    x[0, 100:150] = 1
    for seed in range(30):
        (start, end), = runs_of_ones(perturb_durations(x, 10.0, seed)[0])
        assert start == 100
        assert 144 <= end <= 154


def test_perturb_durations_is_seeded(rng):
    x = (rng.random((2, 100)) < 0.5).astype(float)
    np.testing.assert_array_equal(perturb_durations(x, 20.0, 4), perturb_durations(x, 20.0, 4))


def test_compactness():
    maps = [np.array([[1.0, -2.0]]), np.array([[0.5, 0.5]])]
    assert compactness(maps) == pytest.approx(2.0)
    with pytest.raises(EvaluationError):
        compactness([])


def test_result_ci():
    assert result_ci("selectivity", 0.5, 100) == pytest.approx(confidence_interval(0.5, 100))
    assert result_ci("max-sensitivity", 0.3, 100) is None
    assert result_ci("compactness", 1.0, 3, [1.0, 2.0, 3.0]) == pytest.approx(1.96 / np.sqrt(3))


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(continuity_radius_pct=0.0)
    with pytest.raises(ValueError):
        EvalConfig(window=0)
    assert EvalConfig(max_segment_seconds=10.0, dt_seconds=1.0).max_segment_steps == 10


def test_metrics_are_bounded_and_seeded(small_network, eval_samples):
    explainer = make_explainer("tsa-ns")
    value = selectivity(small_network, explainer, eval_samples, SMALL, bias_dim=2)
    assert 0.0 <= value <= 1.0
    assert value == selectivity(small_network, explainer, eval_samples, SMALL, bias_dim=2)
    completeness = output_completeness(small_network, explainer, eval_samples, SMALL)
    assert 0.0 <= completeness <= 1.0
    assert completeness == output_completeness(small_network, explainer, eval_samples, SMALL)


def test_max_sensitivity(small_network, eval_samples):
    explainer = make_explainer("sam")
    sample = eval_samples[0]
    value = max_sensitivity(small_network, explainer, sample, SMALL, bias_dim=2)
    assert value >= 0.0
    assert value == max_sensitivity(small_network, explainer, sample, SMALL, bias_dim=2)
    none = EvalConfig(window=SMALL.window, n_perturbations=0)
    assert max_sensitivity(small_network, explainer, sample, none, bias_dim=2) == 0.0


def test_empty_samples_rejected(small_network):
    with pytest.raises(EvaluationError):
        selectivity(small_network, make_explainer("tsa-s"), [], SMALL)


def test_run_evaluation_rows(small_series, small_network, eval_samples):
    rows = run_evaluation(small_network, small_series, eval_samples, ["tsa-s", "tsa-ns", "sam"], list(METRICS),
                          SMALL, model_name="SNN-1L")
    assert len(rows) == 12
    assert {(row["metric"], row["explainer"]) for row in rows} == {
        (metric, method) for metric in METRICS for method in ("tsa-s", "tsa-ns", "sam")}
    for row in rows:
        assert row["n"] == len(eval_samples) and row["model"] == "SNN-1L"
        assert (row["ci"] is None) == (row["metric"] == "max-sensitivity")
    again = run_evaluation(small_network, small_series, eval_samples, ["tsa-s", "tsa-ns", "sam"], list(METRICS),
                           SMALL, model_name="SNN-1L")
    assert rows == again


def test_run_evaluation_rejects_unknown_names(small_series, small_network, eval_samples):
    with pytest.raises(EvaluationError):
        run_evaluation(small_network, small_series, eval_samples, ["tsa-s"], ["fidelity"], SMALL)
    with pytest.raises(EvaluationError):
        run_evaluation(small_network, small_series, eval_samples, ["lime"], ["compactness"], SMALL)


def test_inversion_budget_is_ceil_of_fraction():
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    for ranks in range(60):
        counts = inversion_budget(grid, ranks)
        assert counts[0] == 0 and counts[-1] == ranks
        assert np.all(counts <= np.ceil(grid * ranks))
        assert np.all(counts >= grid * ranks - 1e-9)
        assert np.all(np.diff(counts) >= 0)
        if ranks:
            assert counts[1] == 1


def test_selectivity_of_a_constant_model_is_one(small_series, rng):
    network = _constant_network(small_series)
    steps = np.flatnonzero(small_series.labels == 0)
    samples = [EvalSample(small_series, int(t), 0) for t in steps[steps >= SMALL.window][:4]]
    explainer = _fixed_explainer(rng.normal(size=(3, SMALL.window + 1)))
    assert selectivity(network, explainer, samples, SMALL, bias_dim=2) == pytest.approx(1.0)


def test_selectivity_when_the_first_inversion_flips(small_network, eval_samples, monkeypatch):
    def flip_after_first(model, item, cfg, bias_dim):
        wrong = (item.sample.true_label + 1) % 4
        return np.array([item.sample.true_label] + [wrong] * 7)

    monkeypatch.setattr(eval_utils, "_rank_predictions", flip_after_first)
    # Only the first grid cell keeps any area: (1 + 0) / 2 * 0.01.
    value = selectivity(small_network, make_explainer("tsa-s"), eval_samples, SMALL, bias_dim=2)
    assert value == pytest.approx(0.005)


def test_output_completeness_without_zero_cells(small_network, eval_samples):
    explainer = _fixed_explainer(np.ones((3, SMALL.window + 1)))
    assert output_completeness(small_network, explainer, eval_samples, SMALL) == 1.0


def test_output_completeness_of_a_constant_model(small_series, eval_samples):
    network = _constant_network(small_series)
    assert output_completeness(network, make_explainer("tsa-s"), eval_samples, SMALL) == 1.0


def test_max_sensitivity_of_an_input_blind_explainer(small_network, eval_samples, rng):
    explainer = _fixed_explainer(rng.normal(size=(3, SMALL.window + 1)))
    assert max_sensitivity(small_network, explainer, eval_samples[0], SMALL, bias_dim=2) == 0.0


def test_run_evaluation_uses_the_series_step_length(small_series, small_network, eval_samples, monkeypatch):
    half_second = replace(small_series, dt_seconds=0.5)
    assert config_for_series(SMALL, half_second).max_segment_steps == 10
    assert SMALL.max_segment_steps == 5

    seen = []
    original = eval_utils.segment_map

    def recording_segment_map(attr, cfg):
        seen.append(cfg.max_segment_steps)
        return original(attr, cfg)

    monkeypatch.setattr(eval_utils, "segment_map", recording_segment_map)
    run_evaluation(small_network, half_second, eval_samples, ["tsa-ns"], ["selectivity"], SMALL)
    assert seen and set(seen) == {10}


def test_each_sample_window_is_simulated_once(small_network, eval_samples, monkeypatch):
    calls = []
    original = eval_utils.forward

    def counting_forward(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(eval_utils, "forward", counting_forward)
    monkeypatch.setattr(attribution_utils, "forward", counting_forward)
    none = EvalConfig(window=SMALL.window, n_perturbations=0)
    max_sensitivity(small_network, make_explainer("tsa-s"), eval_samples[0], none, bias_dim=2)
    assert len(calls) == 1


@pytest.mark.slow
def test_synthetic_explanation_orderings():
    series = generate_synthetic(seed=7)
    train_split, test_split = split_sequential(series, [0.7, 0.3])
    config = LifConfig(dt=0.001, tau_syn=0.01, tau_mem=0.001)
    network = init_network([series.n_channels, 10, series.n_classes], config, seed=7)
    cfg = TrainConfig(learning_rate=0.001, batch_size=128, max_epochs=20, window_len=100, optimizer="adam",
                      progress=False)
    trained, _ = train(network, train_split, None, cfg)

    samples = sample_eval_set(test_split, "synthetic", seed=7)
    rows = run_evaluation(trained, test_split, samples, ["tsa-s", "tsa-ns", "sam"], list(METRICS), EvalConfig())
    value = {(row["metric"], row["explainer"]): row["value"] for row in rows}
    ci = {(row["metric"], row["explainer"]): row["ci"] for row in rows}

    sel = {method: (value[("selectivity", method)], ci[("selectivity", method)]) for method in ("tsa-s", "tsa-ns", "sam")}
    for other in ("tsa-s", "sam"):
        assert sel["tsa-ns"][0] + sel["tsa-ns"][1] + sel[other][1] < sel[other][0]
    assert value[("output-completeness", "tsa-ns")] >= 0.95
    assert value[("output-completeness", "tsa-ns")] > value[("output-completeness", "tsa-s")]
    for method in ("tsa-s", "tsa-ns"):
        assert value[("max-sensitivity", method)] < value[("max-sensitivity", "sam")]
    assert value[("compactness", "tsa-s")] < value[("compactness", "tsa-ns")] < value[("compactness", "sam")]
