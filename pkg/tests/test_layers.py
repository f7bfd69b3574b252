import numpy as np
import pytest

from dgembed import autodiff as ad
from dgembed.autodiff import Parameter, Tensor
from dgembed.errors import DataError, DimensionError
from dgembed.graph import make_snapshot, pad_adjacency
from dgembed.layers import GCNLayer, GINELayer, gcn_forward, gine_forward, message_edges, normalized_adjacency

from conftest import fd_check


def random_graph(rng, n, p=0.4):
    A = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return A + A.T


def gcn(rng, d_in, d_out):
    layer = GCNLayer(d_in, d_out, rng, dropout=0.5)
    layer.eval()
    return layer


# --- GCN ------------------------------------------------------------------------------

def test_gcn_single_node_identity(rng):
    layer = gcn(rng, 3, 3)
    layer.weight.data[...] = np.eye(3)
    layer.bias.data[...] = 0
    x = rng.normal(size=(1, 3))
    assert np.allclose(gcn_forward(layer, x, np.zeros((1, 1))).data, np.tanh(x), atol=0)


def test_gcn_zero_features(rng):
    layer = gcn(rng, 3, 2)
    out = gcn_forward(layer, np.zeros((4, 3)), random_graph(rng, 4)).data
    assert np.allclose(out, np.tanh(layer.bias.data))


def test_gcn_path_graph_dense_oracle(rng):
    layer = gcn(rng, 2, 3)
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    X = rng.normal(size=(3, 2))
    deg = np.array([2.0, 3.0, 2.0])
    A_hat = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            A_hat[i, j] = (A[i, j] + (i == j)) / np.sqrt(deg[i] * deg[j])
    ref = np.tanh(A_hat @ (X @ layer.weight.data + layer.bias.data))
    assert np.max(np.abs(gcn_forward(layer, X, A).data - ref)) < 1e-12


def test_gcn_without_edges_is_dense_layer(rng):
    layer = gcn(rng, 4, 3)
    X = rng.normal(size=(5, 4))
    out = gcn_forward(layer, X, np.zeros((5, 5))).data
    assert np.allclose(out, np.tanh(X @ layer.weight.data + layer.bias.data), atol=1e-15)


def test_gcn_accepts_padded_adjacency(rng):
    s = make_snapshot(0, [(0, 1, 1.0)], 3, False)
    layer = gcn(rng, 3, 2)
    X = rng.normal(size=(3, 3))
    a = gcn_forward(layer, X, pad_adjacency(s, 3)).data
    b = gcn_forward(layer, X, pad_adjacency(s, 3).matrix).data
    assert np.array_equal(a, b)
    with pytest.raises(DimensionError):
        layer(X, np.eye(4))


def test_gcn_dropout_only_in_training(rng):
    layer = GCNLayer(4, 8, rng, dropout=0.5)
    X = rng.normal(size=(6, 4))
    A_norm = normalized_adjacency(random_graph(rng, 6))
    layer.train()
    h = layer(X, A_norm).data
    assert np.any(h == 0)
    layer.eval()
    assert np.array_equal(layer(X, A_norm).data, layer(X, A_norm).data)


def test_gcn_permutation_equivariance(rng):
    for _ in range(10):
        layer = gcn(rng, 3, 4)
        A = random_graph(rng, 6)
        X = rng.normal(size=(6, 3))
        P = np.eye(6)[rng.permutation(6)]
        a = gcn_forward(layer, P @ X, P @ A @ P.T).data
        b = P @ gcn_forward(layer, X, A).data
        assert np.max(np.abs(a - b)) < 1e-12


def test_gcn_gradients(rng):
    for _ in range(20):
        layer = gcn(rng, 3, 2)
        X = Parameter(rng.normal(size=(4, 3)))
        A_norm = normalized_adjacency(random_graph(rng, 4))
        w = rng.normal(size=(4, 2))
        fd_check(lambda: (layer(X, A_norm) * w).sum(), layer.parameters() + [X])


# --- GINE -----------------------------------------------------------------------------

def identity_gine(rng, d):
    layer = GINELayer(d, rng, hidden=d)
    layer.phi_in.weight.data[...] = np.eye(d)
    layer.phi_in.bias.data[...] = 0
    layer.phi_out.weight.data[...] = np.eye(d)
    layer.phi_out.bias.data[...] = 0
    return layer


def test_gine_empty_neighbourhood(rng):
    layer = identity_gine(rng, 3)
    X = np.abs(rng.normal(size=(2, 3)))  # phi has a ReLU inside
    out = gine_forward(layer, X, (np.array([], int), np.array([], int)), np.zeros(0)).data
    assert np.allclose(out, X, atol=0)


def test_gine_two_node_formula(rng):
    layer = GINELayer(2, rng, hidden=3)
    layer.eps.data[...] = 0.3
    X = rng.normal(size=(2, 2))
    w = 0.7
    out = gine_forward(layer, X, (np.array([0]), np.array([1])), np.array([w])).data
    relu = lambda z: np.maximum(z, 0)
    msg = relu(X[0] + (w * layer.edge_proj.weight.data[0] + layer.edge_proj.bias.data))
    pre = np.stack([1.3 * X[0], 1.3 * X[1] + msg])
    phi = lambda h: relu(h @ layer.phi_in.weight.data + layer.phi_in.bias.data) @ layer.phi_out.weight.data + layer.phi_out.bias.data
    assert np.max(np.abs(out - phi(pre))) < 1e-12


def test_gine_neighbour_order_invariance(rng):
    layer = GINELayer(3, rng)
    X = rng.normal(size=(5, 3))
    src, dst = rng.integers(0, 5, 8), rng.integers(0, 5, 8)
    attr = rng.normal(size=8)
    perm = rng.permutation(8)
    a = gine_forward(layer, X, (src, dst), attr).data
    b = gine_forward(layer, X, (src[perm], dst[perm]), attr[perm]).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_gine_permutation_equivariance(rng):
    for _ in range(10):
        layer = GINELayer(3, rng)
        s = make_snapshot(0, [(int(u), int(v), float(w)) for u, v, w in zip(rng.integers(0, 6, 7), rng.integers(0, 6, 7), rng.uniform(0.5, 2, 7)) if u != v], 6, False)
        src, dst, w = message_edges(s, False)
        X = rng.normal(size=(6, 3))
        perm = rng.permutation(6)  # new id of old node i is perm[i]
        Xp = np.empty_like(X)
        Xp[perm] = X
        a = gine_forward(layer, Xp, (perm[src], perm[dst]), w).data
        b = gine_forward(layer, X, (src, dst), w).data
        assert np.max(np.abs(a[perm] - b)) < 1e-12


def test_gine_missing_attributes(rng):
    layer = GINELayer(2, rng)
    X = rng.normal(size=(2, 2))
    with pytest.raises(DataError):
        layer(X, [0], [1], None)
    with pytest.raises(DataError):
        layer(X, [0, 1], [1, 0], np.ones(1))


def test_message_edges_both_directions():
    s = make_snapshot(0, [(0, 1, 2.0), (1, 2, 3.0)], 3, False)
    src, dst, w = message_edges(s, False)
    assert sorted(zip(src.tolist(), dst.tolist(), w.tolist())) == [
        (0, 1, 2.0), (1, 0, 2.0), (1, 2, 3.0), (2, 1, 3.0)
    ]
    src, dst, w = message_edges(s, True)
    assert len(src) == 2


def test_gine_gradients(rng):
    for _ in range(20):
        layer = GINELayer(3, rng, hidden=4)
        layer.eps.data[...] = rng.normal()
        X = Parameter(rng.normal(size=(4, 3)))
        src, dst = rng.integers(0, 4, 6), rng.integers(0, 4, 6)
        attr = rng.normal(size=6)
        w = rng.normal(size=(4, 3))
        fd_check(lambda: (layer(X, src, dst, attr) * w).sum(), layer.parameters() + [X])
