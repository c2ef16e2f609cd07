import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exel.errors import DimensionMismatch, NonFiniteLoss
from exel.gnn import (LAYER_KINDS, READOUTS, LayerSpec, ModelParams, TrainConfig, build_specs,
                      embed, forward, gradient_check, init_model, layer_forward,
                      lipschitz_check, loss_and_gradients, predict, readout, saliency,
                      softmax, train)
from exel.graph import graph_from_edges
from exel.rng import Xoshiro256
from exel.synth import SynthConfig, generate_dataset


def scalar_gcn(w, W_out, b_out=None, readout_kind="sum"):
    spec = LayerSpec("gcn", 1, 1)
    W_out = np.array(W_out, dtype=float)
    b_out = np.zeros(W_out.shape[1]) if b_out is None else np.array(b_out, dtype=float)
    return ModelParams([spec], [{"W": np.array([[w]]), "b": np.zeros(1)}], W_out, b_out,
                       readout_kind)


def random_graph(rng, n=4, features=3, label=None):
    edges = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1)]
    x = np.array([[rng.normal() for _ in range(features)] for _ in range(n)])
    return graph_from_edges(n, edges, x, label=rng.below(2) if label is None else label)


# ---------------------------------------------------------------- layers


def test_gcn_isolated_node():
    g = graph_from_edges(1, [], np.array([[1.0]]))
    out = layer_forward(LayerSpec("gcn", 1, 1), {"W": np.array([[2.0]]), "b": np.zeros(1)},
                        g.features, g)
    assert out.tolist() == [[2.0]]


def test_gcn_two_node_path():
    g = graph_from_edges(2, [(0, 1)], np.array([[1.0], [3.0]]))
    w = {"W": np.array([[2.0]]), "b": np.zeros(1)}
    # rows of the normalized adjacency are (0.5, 0.5): both nodes see 2, times 2
    np.testing.assert_allclose(layer_forward(LayerSpec("gcn", 1, 1), w, g.features, g),
                               [[4.0], [4.0]], atol=1e-15)


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_zero_weights_give_zero_output(kind):
    rng = Xoshiro256(1)
    g = random_graph(rng)
    spec = LayerSpec(kind, 3, 4)
    w = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
    assert not np.any(layer_forward(spec, w, g.features, g))


def test_layer_dimension_mismatch():
    g = random_graph(Xoshiro256(2))
    spec = LayerSpec("gcn", 5, 2)
    with pytest.raises(DimensionMismatch):
        layer_forward(spec, {"W": np.zeros((5, 2)), "b": np.zeros(2)}, g.features, g)


def test_sage_isolated_node_uses_zero_neighbor_mean():
    g = graph_from_edges(2, [], np.array([[1.0], [2.0]]))
    w = {"W": np.array([[1.0], [10.0]]), "b": np.zeros(1)}
    assert layer_forward(LayerSpec("sage", 1, 1), w, g.features, g).tolist() == [[1.0], [2.0]]


def test_gin_hand_example():
    g = graph_from_edges(2, [(0, 1)], np.array([[1.0], [2.0]]))
    w = {"W1": np.array([[1.0]]), "b1": np.zeros(1), "W2": np.array([[2.0]]), "b2": np.zeros(1)}
    # (1 + 0.5) h_i + h_j: 1.5 + 2 = 3.5 and 3 + 1 = 4, then doubled
    out = layer_forward(LayerSpec("gin", 1, 1, gin_eps=0.5), w, g.features, g)
    np.testing.assert_allclose(out, [[7.0], [8.0]])


# ---------------------------------------------------------------- readout and forward


def test_readout_examples():
    r = np.array([[1.0, 2.0]] * 3)
    assert readout(r, "mean").tolist() == [1.0, 2.0]
    H = np.array([[1.0, 5.0], [3.0, 2.0]])
    np.testing.assert_allclose(readout(H, "sum"), 2 * readout(H, "mean"))
    assert readout(H, "max").tolist() == [3.0, 5.0]


def test_zero_model_logits_equal_bias():
    g = random_graph(Xoshiro256(3))
    m = init_model(build_specs("sage", 3, [4]), 3, "mean").zeros_like()
    m.b_out[...] = [0.1, -0.2, 0.3]
    res = forward(m, g)
    np.testing.assert_allclose(res.logits, m.b_out)
    np.testing.assert_allclose(res.probs, softmax(m.b_out))


def test_path_model_sum_readout_logit():
    g = graph_from_edges(2, [(0, 1)], np.array([[1.0], [3.0]]))
    assert forward(scalar_gcn(2.0, [[1.0]]), g).logits[0] == pytest.approx(8.0, abs=1e-12)


@pytest.mark.parametrize("kind", LAYER_KINDS)
@pytest.mark.parametrize("ro", READOUTS)
def test_permutation_invariance(kind, ro):
    rng = Xoshiro256(5)
    g = random_graph(rng, n=6)
    m = init_model(build_specs(kind, 3, [5, 4]), 2, ro, seed=2)
    perm = rng.permutation(6)
    a, b = forward(m, g), forward(m, g.permute(perm))
    np.testing.assert_allclose(b.z, a.z, atol=1e-10)
    np.testing.assert_allclose(b.logits, a.logits, atol=1e-10)
    np.testing.assert_allclose(b.H, a.H[perm], atol=1e-10)


def test_predict_handles_mixed_sizes_in_order():
    rng = Xoshiro256(6)
    gs = [random_graph(rng, n=k) for k in (5, 3, 5, 4)]
    m = init_model(build_specs("gcn", 3, [4]), 2, "mean", seed=1)
    assert predict(m, gs).tolist() == [int(forward(m, g).logits.argmax()) for g in gs]


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("kind", LAYER_KINDS)
@pytest.mark.parametrize("ro", READOUTS)
def test_gradients_match_finite_differences(kind, ro):
    rng = Xoshiro256(hash((kind, ro)) % 1000)
    g = random_graph(rng)
    m = init_model(build_specs(kind, 3, [4, 4], gin_eps=0.1), 2, ro, seed=3, init_scale=0.5)
    assert gradient_check(m, g) <= 1e-5


def test_gradient_check_catches_wrong_gradient():
    g = random_graph(Xoshiro256(7))
    m = init_model(build_specs("gcn", 3, [4]), 2, "mean", seed=1, init_scale=0.5)
    bad = loss_and_gradients(m, g)
    bad.grads.W_out[...] *= 1.01
    assert gradient_check(m, g, analytic=bad) > 1e-5


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_readout_gradient_rows_are_equal(kind):
    rng = Xoshiro256(8)
    g = random_graph(rng, n=5)
    for ro in ("sum", "mean"):
        m = init_model(build_specs(kind, 3, [4]), 2, ro, seed=4)
        dH = loss_and_gradients(m, g).dH
        assert np.max(np.abs(dH - dH[0])) <= 1e-10
    # each mean-readout row is the head gradient divided by n
    m_mean = init_model(build_specs(kind, 3, [4]), 2, "mean", seed=4)
    lg_mean = loss_and_gradients(m_mean, g)
    res = forward(m_mean, g)
    dz = (res.probs - np.eye(2)[g.label]) @ m_mean.W_out.T
    np.testing.assert_allclose(lg_mean.dH[0], dz / g.n, atol=1e-12)


def test_max_readout_ties_route_to_lowest_row():
    g = graph_from_edges(2, [], np.array([[1.0], [1.0]]), label=0)
    m = scalar_gcn(1.0, [[1.0, -1.0]], readout_kind="max")
    dH = loss_and_gradients(m, g).dH
    assert dH[0, 0] != 0.0 and dH[1, 0] == 0.0


def test_saliency_cases():
    rng = Xoshiro256(9)
    g = random_graph(rng, n=5)
    m = init_model(build_specs("gcn", 3, [4]), 2, "sum", seed=1)
    assert not np.any(saliency(m.zeros_like(), g))
    perm = rng.permutation(5)
    np.testing.assert_allclose(saliency(m, g.permute(perm)), saliency(m, g)[perm], atol=1e-12)
    # scalar chain: loss = log(1 + exp(-2 w x)) for logits (w x, -w x), label 0
    x, w = 0.7, 1.3
    iso = graph_from_edges(1, [], np.array([[x]]), label=0)
    expect = 2 * w / (1 + math.exp(2 * w * x))
    assert saliency(scalar_gcn(w, [[1.0, -1.0]]), iso)[0] == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------- training


def test_zero_epochs_returns_initialization():
    data = generate_dataset(SynthConfig(graph_count=6, seed=1))
    m = init_model(build_specs("gcn", 11, [4]), 2, "mean", seed=5)
    trained, trace = train(m, data, TrainConfig(epochs=0))
    assert trained.equals(m) and trace == []


def test_zero_learning_rate_leaves_parameters():
    data = generate_dataset(SynthConfig(graph_count=6, seed=1))
    m = init_model(build_specs("gin", 11, [4]), 2, "sum", seed=5)
    trained, trace = train(m, data, TrainConfig(epochs=3, learning_rate=0.0))
    assert trained.equals(m) and len(trace) == 3


def test_one_step_on_scalar_model():
    w, x, lr = 0.4, 1.0, 0.1
    iso = graph_from_edges(1, [], np.array([[x]]), label=0)
    m = scalar_gcn(w, [[1.0, -1.0]])
    trained, _ = train(m, [iso], TrainConfig(epochs=1, learning_rate=lr))
    # d/dw log(1 + exp(-2 w)) = -2 / (1 + exp(2 w))
    grad = -2.0 / (1.0 + math.exp(2 * w))
    assert trained.weights[0]["W"][0, 0] == pytest.approx(w - lr * grad, rel=1e-12)


def test_small_learning_rate_reduces_loss():
    data = generate_dataset(SynthConfig(graph_count=40, seed=2)).subset("train")
    m = init_model(build_specs("gcn", 11, [8, 8]), 2, "mean", seed=2)
    _, trace = train(m, data, TrainConfig(epochs=11, learning_rate=1e-3))
    assert trace[10] < trace[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_trace():
    g = graph_from_edges(1, [], np.array([[1.0]]), label=0)
    m = scalar_gcn(1.0, [[1.0, -1.0]])
    with pytest.raises(NonFiniteLoss) as info:
        train(m, [g], TrainConfig(epochs=50, learning_rate=1e308))
    assert info.value.trace


def test_training_is_deterministic():
    data = generate_dataset(SynthConfig(graph_count=10, seed=3))
    m = init_model(build_specs("sage", 11, [4]), 2, "max", seed=3)
    a, ta = train(m, data, TrainConfig(epochs=5))
    b, tb = train(m, data, TrainConfig(epochs=5))
    assert a.equals(b) and ta == tb


def test_embed_returns_final_layer_and_readout():
    g = random_graph(Xoshiro256(10))
    m = init_model(build_specs("gcn", 3, [4, 6]), 2, "mean", seed=1)
    H, z = embed(m, g)
    assert H.shape == (4, 6)
    np.testing.assert_allclose(z, H.mean(axis=0))


# ---------------------------------------------------------------- Lipschitz head


def test_lipschitz_identical_inputs_and_zero_head():
    m = init_model(build_specs("gcn", 3, [4]), 3, "mean", seed=1)
    zero = m.copy()
    zero.W_out[...] = 0.0
    rep = lipschitz_check(zero, pairs=50)
    assert rep.bound == 0.0 and rep.max_ratio == 0.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5), st.floats(0.1, 10))
def test_lipschitz_bound_holds(seed, classes, scale):
    m = init_model(build_specs("gcn", 3, [6]), classes, "mean", seed=seed, init_scale=1.0)
    assert lipschitz_check(m, pairs=200, seed=seed, scale=scale).max_ratio <= 1 + 1e-9
