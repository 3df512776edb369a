import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlab.networks import ReluNetwork, ReluNode, nn_eval, nn_midpoint, random_dag, train_nn
from dlab.population import ContractError, Population, mse


def naive_eval(net, x):
    """Independent evaluator: recursion from the output over global indices."""
    def value(i):
        if i < net.n_in:
            return float(x[i])
        node = net.nodes[i - net.n_in]
        return max(0.0, sum(w * value(s) for s, w in zip(node.sources, node.weights)) + node.bias)

    total = net.n_in + net.size
    return [sum(net.out_weights[o, i] * value(i) for i in range(total)) + net.out_bias[o]
            for o in range(net.n_out)]


def probe_grid(p, per_axis=11, lo=-3.0, hi=3.0):
    axes = [np.linspace(lo, hi, per_axis)] * p
    return np.stack(np.meshgrid(*axes), -1).reshape(-1, p)


# -- structure -------------------------------------------------------------------------

def test_zero_weights_give_output_bias():
    net = ReluNetwork(2, [ReluNode((0, 1), (0.0, 0.0), 0.0)], np.zeros((2, 3)), [0.7, -1.2])
    np.testing.assert_array_equal(net.predict(np.random.default_rng(0).normal(size=(5, 2))),
                                  np.tile([0.7, -1.2], (5, 1)))


def test_single_relu_node_is_rectifier():
    net = ReluNetwork.from_dag(1, {"h": ({"x0": 1.0}, 0.0)}, ({"h": [1.0]}, [0.0]))
    x = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(net.predict(x)[:, 0], np.maximum(0.0, x))


def test_from_dag_orders_nodes_topologically():
    nodes = {"b": ({"a": 2.0, "x0": 1.0}, -0.5), "a": ({"x0": -1.0}, 0.25)}
    net = ReluNetwork.from_dag(1, nodes, ({"b": [1.0], "a": [0.5]}, [0.1]))
    x = 0.3
    a = max(0.0, -x + 0.25)
    b = max(0.0, 2 * a + x - 0.5)
    assert net.predict([x])[0, 0] == pytest.approx(b + 0.5 * a + 0.1, abs=1e-15)


def test_cycles_and_unknown_sources_are_rejected():
    with pytest.raises(ContractError, match="cycle"):
        ReluNetwork.from_dag(1, {"a": ({"b": 1.0}, 0.0), "b": ({"a": 1.0}, 0.0)}, ({"a": [1.0]}, [0.0]))
    with pytest.raises(ContractError, match="unknown"):
        ReluNetwork.from_dag(1, {"a": ({"z": 1.0}, 0.0)}, ({"a": [1.0]}, [0.0]))
    with pytest.raises(ContractError, match="topologically"):
        ReluNetwork(1, [ReluNode((1,), (1.0,))], np.zeros((1, 2)), [0.0])


def test_random_networks_match_naive_evaluator(rng):
    for _ in range(30):
        net = random_dag(rng, int(rng.integers(1, 4)), int(rng.integers(0, 9)), n_out=int(rng.integers(1, 3)))
        X = rng.normal(size=(15, net.n_in))
        np.testing.assert_allclose(nn_eval(net, X), np.array([naive_eval(net, x) for x in X]),
                                   atol=1e-12, rtol=0)


def test_json_round_trip(rng):
    net = random_dag(rng, 2, 6, n_out=2)
    doc = json.loads(net.dumps())
    again = ReluNetwork.from_dict(doc)
    assert again.dumps() == net.dumps()
    X = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(again.predict(X), net.predict(X))
    doc["nodes"][0]["id"] = 99
    with pytest.raises(ContractError):
        ReluNetwork.from_dict(doc)


# -- midpoint closure -------------------------------------------------------------------------

def test_midpoint_of_identical_networks(rng):
    net = random_dag(rng, 2, 5)
    X = probe_grid(2)
    np.testing.assert_allclose(nn_midpoint(net, net).predict(X), net.predict(X), atol=1e-12, rtol=0)


def test_midpoint_sizes_add(rng):
    n1, n2 = random_dag(rng, 2, 3), random_dag(rng, 2, 5)
    assert nn_midpoint(n1, n2).size == 8
    a, b = random_dag(rng, 2, 4), random_dag(rng, 2, 4)
    assert nn_midpoint(a, b).size == 8


def test_midpoint_probe_grid(rng):
    for _ in range(20):
        n1 = random_dag(rng, 2, int(rng.integers(0, 7)), n_out=2)
        n2 = random_dag(rng, 2, int(rng.integers(0, 7)), n_out=2)
        X = probe_grid(2, 21)
        np.testing.assert_allclose(nn_midpoint(n1, n2).predict(X), 0.5 * (n1.predict(X) + n2.predict(X)),
                                   atol=1e-9, rtol=0)


def test_midpoint_rejects_mismatched_shapes(rng):
    with pytest.raises(ContractError):
        nn_midpoint(random_dag(rng, 2, 3), random_dag(rng, 3, 3))


# -- trainer ---------------------------------------------------------------------------------

def test_constant_labels_fit_exactly(rng):
    P = Population(rng.normal(size=(20, 2)), np.full(20, 0.37))
    _, risk = train_nn(P, 2, seed=0, steps=50)
    assert risk <= 1e-20


def test_linear_labels_beat_least_squares_oracle(rng):
    X = rng.normal(size=(30, 2))
    y = X @ np.array([0.8, -1.3]) + 0.4 + 0.05 * rng.normal(size=30)
    P = Population(X, y, rng.dirichlet(np.ones(30)))
    # independent oracle: weighted normal equations with a vanishing ridge
    A = np.hstack([np.ones((30, 1)), X])
    W = np.diag(P.w)
    beta = np.linalg.solve(A.T @ W @ A + 1e-12 * np.eye(3), A.T @ W @ y)
    oracle = float(P.w @ (A @ beta - y) ** 2)
    _, risk = train_nn(P, 2, seed=1, steps=500)
    assert risk <= oracle + 1e-12


def test_training_is_bit_reproducible(rng):
    P = Population(rng.normal(size=(16, 1)), np.sin(3 * rng.normal(size=16)))
    a = train_nn(P, 3, seed=5, restarts=2, steps=300)
    b = train_nn(P, 3, seed=5, restarts=2, steps=300)
    assert a[1] == b[1] and a[0].dumps() == b[0].dumps()
    assert mse(a[0].compile(P), P) == a[1]


def test_size_budget_must_be_positive(rng):
    with pytest.raises(ContractError):
        train_nn(Population([0.0], [0.0]), 0)


# -- properties -------------------------------------------------------------------------

@given(st.integers(0, 2**32 - 1), st.integers(0, 8), st.integers(0, 8), st.integers(1, 3))
def test_property_midpoint_average_and_size(seed, s1, s2, n_in):
    rng = np.random.default_rng(seed)
    n1, n2 = random_dag(rng, n_in, s1), random_dag(rng, n_in, s2)
    m = nn_midpoint(n1, n2)
    assert m.size == s1 + s2
    X = rng.normal(size=(64, n_in)) * 3
    np.testing.assert_allclose(m.predict(X), 0.5 * (n1.predict(X) + n2.predict(X)), atol=1e-9, rtol=0)
    # midpoint stays a valid DAG in storage order
    assert all(s < n_in + j for j, node in enumerate(m.nodes) for s in node.sources)
