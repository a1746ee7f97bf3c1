import math

import numpy as np
import pytest

import attribution_utils
from attribution_utils import (AttributionMap, DecayParams, Variant, class_slice, component_terms, explain,
                               sam, softmax, spike_component_ns, spike_component_s, stack_slices, tsa)
from snn_utils import LayerState, LifConfig, Network, NeuronState, forward, init_network


def _brute_term(train, step, t, gamma, silent_value):
    weight = 1.0 if train[step] > 0 else silent_value
    return weight * math.exp(-gamma * (t - step))


def _brute_component(train, t, gamma, silent_value):
    return sum(_brute_term(train, step, t, gamma, silent_value) for step in range(t + 1))


def _straight_line_tsa(network, trace, x, t, gamma, variant):
    """Per-step product of diag(N) W over the layers, times the class probabilities, one step at a time."""
    layers = [x] + list(trace.spikes[1:])
    probabilities = softmax(trace.out_potentials)
    values = np.zeros((network.n_classes, network.n_inputs, t + 1))
    for step in range(t + 1):
        product = np.eye(network.n_inputs)
        for spikes, weight in zip(layers, network.weights):
            silent_value = -1.0 / spikes.shape[0] if variant == "ns" else 0.0
            n = [_brute_term(row, step, t, gamma, silent_value) for row in spikes]
            matrix = weight if variant != "sam" else np.ones_like(weight)
            product = product @ np.diag(n) @ matrix
        if variant != "sam":
            product = product * probabilities[:, step][None, :]
        values[:, :, step] = product.T
    return values


def _random_instance(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(size) for size in rng.integers(1, 6, size=depth + 1)]
    steps = int(rng.integers(1, 21))
    config = LifConfig(dt=0.001, tau_syn=float(rng.uniform(0.002, 0.02)), tau_mem=float(rng.uniform(0.0005, 0.005)),
                       theta=float(rng.uniform(0.2, 1.0)))
    weights = [rng.normal(0.0, 2.0, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    network = Network(tuple(sizes), tuple(weights), config)
    x = (rng.random((sizes[0], steps)) < rng.uniform(0.2, 0.8)).astype(float)
    return network, x


def test_spike_components_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        steps = int(rng.integers(1, 21))
        train = (rng.random(steps) < 0.5).astype(float)
        t = int(rng.integers(0, steps))
        gamma = float(rng.uniform(0.05, 3.0))
        size = int(rng.integers(1, 6))
        assert spike_component_s(train, t, gamma) == pytest.approx(_brute_component(train, t, gamma, 0.0),
                                                                   abs=1e-9)
        assert spike_component_ns(train, t, gamma, size) == pytest.approx(
            _brute_component(train, t, gamma, -1.0 / size), abs=1e-9)


def test_component_terms_sum_to_spike_components(rng):
    spikes = (rng.random((4, 15)) < 0.4).astype(float)
    for variant in (Variant.TSA_S, Variant.TSA_NS):
        for t in range(15):
            terms = component_terms(spikes, t, 0.7, variant)
            assert terms.shape == (4, t + 1)
            for row in range(4):
                expected = (spike_component_ns(spikes[row], t, 0.7, 4) if variant is Variant.TSA_NS
                            else spike_component_s(spikes[row], t, 0.7))
                assert terms[row].sum() == pytest.approx(expected, abs=1e-12)
                if variant is Variant.TSA_S:
                    assert np.all(terms[row][spikes[row, :t + 1] == 0] == 0.0)


def test_kernel_decays_with_age():
    terms = component_terms(np.ones((1, 30)), 29, 0.4, Variant.TSA_S)[0]
    assert np.all(np.diff(terms) > 0)
    assert terms[-1] == 1.0

    # One input spike straight into one readout: the spike's cell fades as the explained step moves away.
    network = Network((1, 1), (np.array([[1.0]]),), LifConfig(dt=0.001, tau_mem=0.002))
    x = np.zeros((1, 40))
    x[0, 5] = 1.0
    values = [explain(network, x, "tsa-s", t=t).values[0, 0, 5] for t in range(5, 40)]
    assert values[0] == pytest.approx(1.0)
    assert np.all(np.diff(np.abs(values)) <= 0)
    assert values[-1] == pytest.approx(math.exp(-0.5 * 34))


def test_old_steps_get_exactly_zero():
    terms = component_terms(np.ones((2, 2000)), 1999, 1.0, Variant.TSA_NS)
    assert np.all(terms[:, :1200] == 0.0)
    assert np.all(terms[:, -700:] > 0.0)


def test_class_slices_are_scaled_by_class_probabilities(rng):
    network = init_network([3, 4], seed=5, weight_scale=2.0)
    x = (rng.random((3, 25)) < 0.5).astype(float)
    trace = forward(network, x)
    decay = DecayParams.from_config(network.config)
    result = tsa(network, trace, x, 20, "tsa-ns", decay)
    probabilities = softmax(trace.out_potentials[:, :21])
    terms = component_terms(x, 20, decay.gamma, Variant.TSA_NS)
    for c in range(4):
        expected = terms * network.weights[0][:, c][:, None] * probabilities[c][None, :]
        np.testing.assert_allclose(class_slice(result, c), expected, rtol=1e-12, atol=1e-15)


def test_tsa_matches_straight_line_chain():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        network, x = _random_instance(rng)
        trace = forward(network, x)
        t = int(rng.integers(0, x.shape[1]))
        decay = DecayParams.from_config(network.config)
        for variant, key in ((Variant.TSA_S, "s"), (Variant.TSA_NS, "ns")):
            result = tsa(network, trace, x, t, variant, decay)
            expected = _straight_line_tsa(network, trace, x, t, decay.gamma, key)
            np.testing.assert_allclose(result.values, expected, rtol=0, atol=1e-9)
        result = sam(trace, x, t, decay)
        np.testing.assert_allclose(result.values, _straight_line_tsa(network, trace, x, t, decay.gamma, "sam"),
                                   rtol=0, atol=1e-9)


def test_softmax_normalizes(rng):
    probabilities = softmax(rng.normal(0.0, 10.0, size=(5, 30)))
    np.testing.assert_allclose(probabilities.sum(axis=0), 1.0, rtol=0, atol=1e-12)
    assert np.all(probabilities >= 0)


def test_sam_is_non_negative(rng):
    network = init_network([3, 6, 4], seed=3, weight_scale=3.0)
    x = (rng.random((3, 40)) < 0.5).astype(float)
    result = explain(network, x, "sam")
    assert np.all(result.values >= 0)
    assert result.variant is Variant.SAM


def test_tsa_s_zero_on_silent_input(rng):
    network = init_network([3, 5, 2], seed=6, weight_scale=3.0)
    x = (rng.random((3, 30)) < 0.5).astype(float)
    x[1] = 0.0
    x[0, :10] = 0.0
    result = explain(network, x, "tsa-s")
    assert np.all(result.values[:, 1, :] == 0.0)
    assert np.all(result.values[:, 0, :10] == 0.0)


def test_ns_equals_s_when_every_input_spikes():
    network = init_network([3, 2], seed=1)
    x = np.ones((3, 12))
    s = explain(network, x, "tsa-s")
    ns = explain(network, x, "tsa-ns")
    np.testing.assert_allclose(s.values, ns.values, rtol=0, atol=0)


def test_ns_equals_s_when_every_neuron_spikes(rng):
    weights = (np.full((3, 4), 5.0), rng.normal(size=(4, 2)))
    network = Network((3, 4, 2), weights, LifConfig(dt=0.001, tau_syn=0.01, tau_mem=0.001))
    x = np.ones((3, 15))
    # A charged synapse makes the hidden layer fire from the first step on.
    initial = NeuronState([LayerState(np.full(4, 100.0), np.zeros(4)), LayerState(np.zeros(2), np.zeros(2))])
    assert np.all(forward(network, x, initial).spikes[1] == 1.0)
    s = explain(network, x, "tsa-s", initial=initial)
    ns = explain(network, x, "tsa-ns", initial=initial)
    np.testing.assert_allclose(s.values, ns.values, rtol=0, atol=0)
    assert np.any(s.values != 0)


def test_ns_penalizes_silence():
    network = init_network([2, 2], seed=0)
    x = np.zeros((2, 5))
    ns = explain(network, x, "tsa-ns")
    # Each silent step contributes -1/B through a single layer: values = -N * W[d, c] * P_c.
    assert np.any(ns.values != 0)
    assert np.all(explain(network, x, "tsa-s").values == 0)


def test_explain_defaults_to_last_step():
    network = init_network([3, 4, 2], seed=2, weight_scale=3.0)
    x = np.ones((3, 8))
    result = explain(network, x, "tsa-ns", window_start=100)
    assert result.values.shape == (2, 3, 8)
    assert result.t_explained == 107
    partial = explain(network, x, "tsa-ns", t=3)
    assert partial.values.shape == (2, 3, 4)


def test_class_slice_and_stack_slices(rng):
    values = rng.normal(size=(3, 2, 5))
    attribution = AttributionMap(values, 4, "tsa-s")
    slices = [class_slice(attribution, c) for c in range(3)]
    np.testing.assert_array_equal(stack_slices(slices, 4, "tsa-s").values, values)
    with pytest.raises(IndexError):
        class_slice(attribution, 3)


def test_variant_parse():
    assert Variant.parse("TSA_NS") is Variant.TSA_NS
    assert Variant.parse(Variant.SAM) is Variant.SAM
    with pytest.raises(ValueError):
        Variant.parse("lrp")


def test_decay_params_validation():
    with pytest.raises(ValueError):
        DecayParams(0.0)
    assert DecayParams.from_config(LifConfig(dt=0.001, tau_mem=0.01)).gamma == pytest.approx(0.1)


def test_step_out_of_range():
    network = init_network([2, 2], seed=0)
    x = np.ones((2, 4))
    with pytest.raises(IndexError):
        explain(network, x, "tsa-s", t=4)
    with pytest.raises(IndexError):
        spike_component_s(np.ones(3), 3, 0.5)


def test_explain_reuses_a_given_trace(rng, monkeypatch):
    network = init_network([3, 5, 2], seed=4, weight_scale=3.0)
    x = (rng.random((3, 20)) < 0.5).astype(float)
    expected = explain(network, x, "tsa-ns")
    trace = forward(network, x)

    def no_simulation(*args, **kwargs):
        raise AssertionError("window simulated again")

    monkeypatch.setattr(attribution_utils, "forward", no_simulation)
    reused = explain(network, x, "tsa-ns", trace=trace)
    np.testing.assert_array_equal(reused.values, expected.values)
