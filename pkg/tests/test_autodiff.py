import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dgembed import autodiff as ad
from dgembed.autodiff import Parameter, Tensor
from dgembed.errors import ConfigurationError, ContractError, DimensionError

from conftest import fd_check


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i][p] * b[p][j]
            out[i][j] = s
    return np.array(out)


def kahan_mean(values):
    total, comp = 0.0, 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(values)


# --- forward values -------------------------------------------------------------------

def test_matmul_identity_and_scalar():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), m).data, m)
    assert ad.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop(rng):
    for _ in range(10):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        assert np.max(np.abs(ad.matmul(a, b).data - triple_loop(a, b))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_activation_values():
    assert ad.apply_activation(Tensor(0.0), "elu").data == 0.0
    assert ad.apply_activation(Tensor(0.0), "tanh").data == 0.0
    assert abs(float(ad.elu(Tensor(-1.0)).data) - (math.exp(-1) - 1)) < 1e-15
    assert abs(float(ad.elu(Tensor(-1.0)).data) - (-0.632121)) < 1e-6
    x = np.linspace(-30, 30, 61)
    assert np.allclose(ad.softplus(x).data, np.log1p(np.exp(x)))
    assert np.allclose(ad.silu(x).data, x / (1 + np.exp(-x)))


def test_unknown_activation_is_config_error():
    with pytest.raises(ConfigurationError):
        ad.apply_activation(Tensor(1.0), "gelu")


def test_reduce_mean_examples(rng):
    assert float(ad.reduce_mean([1.0, 2.0, 3.0]).data) == 2.0
    assert ad.reduce_mean(np.zeros((2, 2)), axis=0).data.tolist() == [0.0, 0.0]
    values = rng.uniform(size=100)
    assert abs(float(ad.reduce_mean(values).data) - kahan_mean(values.tolist())) < 1e-12
    assert abs(float(ad.reduce_mean(values).data) - math.fsum(values) / 100) < 1e-12


def test_reduce_axis_out_of_range():
    with pytest.raises(DimensionError):
        ad.reduce_mean(np.ones((2, 2)), axis=2)
    with pytest.raises(DimensionError):
        ad.reduce_sum(np.ones(3), axis=-2)


def test_forward_bitwise_deterministic(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    f = lambda: ad.tanh(ad.matmul(a, b)).sum(axis=0).data
    assert f().tobytes() == f().tobytes()


# --- backward -------------------------------------------------------------------------

def test_backward_examples():
    p = Parameter(np.arange(6.0).reshape(2, 3))
    grads = ad.backward(p.sum())
    assert np.array_equal(grads[p], np.ones((2, 3)))
    q = Parameter([3.0])
    ad.backward((q * q).sum())
    assert q.grad.tolist() == [6.0]
    num = ad.numerical_gradient(lambda: (q * q).sum(), q)
    assert abs(num[0] - 6.0) < 1e-8


def test_backward_non_scalar_is_contract_error():
    p = Parameter(np.ones(3))
    with pytest.raises(ContractError):
        ad.backward(p * 2.0)


def test_unreached_parameter_gets_exact_zero():
    p, q = Parameter(np.ones(3)), Parameter(np.full(2, 5.0))
    grads = ad.backward((p * p).sum(), params=[p, q])
    assert np.array_equal(grads[q], np.zeros(2))
    assert np.array_equal(q.grad, np.zeros(2))


def test_no_grad_records_nothing():
    p = Parameter(np.ones(3))
    with ad.no_grad():
        y = (p * 2.0).sum()
    assert not y.requires_grad
    assert ad.is_grad_enabled()


def test_shared_subexpression_accumulates():
    p = Parameter([2.0])
    y = p * p
    ad.backward((y + y * 3.0).sum())
    assert p.grad.tolist() == [16.0]


def test_composed_tanh_network(rng):
    W1 = Parameter(rng.normal(size=(4, 5)))
    W2 = Parameter(rng.normal(size=(5, 2)))
    x = rng.normal(size=(3, 4))
    fd_check(lambda: ad.tanh(ad.matmul(ad.tanh(ad.matmul(x, W1)), W2)).sum(), [W1, W2])


UNARY = ["exp", "tanh", "relu", "elu", "sigmoid", "silu", "softplus"]


@pytest.mark.parametrize("kind", UNARY)
def test_activation_gradients(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    for _ in range(20):
        x = rng.normal(size=(3, 2))
        # keep kinks out of the finite-difference stencil
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
        p = Parameter(x)
        w = rng.normal(size=(3, 2))
        fd_check(lambda: (ad.apply_activation(p, kind) * w).sum(), [p])


def test_binary_and_broadcast_gradients(rng):
    for _ in range(20):
        a = Parameter(rng.normal(size=(3, 4)))
        b = Parameter(rng.normal(size=(4,)))
        c = Parameter(rng.uniform(0.5, 2.0, size=(3, 1)))
        fd_check(lambda: ((a + b) * c - a / c + (b ** 2.0)).sum(), [a, b, c])


def test_matmul_gradients(rng):
    for _ in range(20):
        a = Parameter(rng.normal(size=(2, 3, 4)))
        b = Parameter(rng.normal(size=(4, 2)))
        w = rng.normal(size=(2, 3, 2))
        fd_check(lambda: (ad.matmul(a, b) * w).sum(), [a, b])


def test_log_sqrt_gradients(rng):
    for _ in range(20):
        p = Parameter(rng.uniform(0.5, 3.0, size=5))
        fd_check(lambda: (ad.log(p) * ad.sqrt(p)).sum(), [p])


def test_reduction_and_shape_gradients(rng):
    for _ in range(20):
        p = Parameter(rng.normal(size=(2, 3, 4)))
        w = rng.normal(size=(4, 3))
        fd_check(
            lambda: (
                ad.transpose(p.mean(axis=0), (1, 0)) * w
            ).sum() + p.reshape((6, 4))[1:4].sum() + (p[:, 1, :] ** 2.0).sum(),
            [p],
        )


def test_fancy_index_gradient_repeats(rng):
    p = Parameter(rng.normal(size=(4, 2)))
    idx = np.array([0, 2, 2, 3, 0])
    w = rng.normal(size=(5, 2))
    fd_check(lambda: (p[idx] * w).sum(), [p])


def test_concat_stack_scatter_gradients(rng):
    for _ in range(20):
        a = Parameter(rng.normal(size=(2, 3)))
        b = Parameter(rng.normal(size=(1, 3)))
        idx = rng.integers(0, 4, size=3)
        w = rng.normal(size=(4, 3))
        fd_check(
            lambda: (ad.scatter_add(ad.concat([a, b], axis=0), idx, 4) * w).sum()
            + (ad.stack([a, a * 2.0], axis=1) ** 2.0).sum(),
            [a, b],
        )


def test_softmax_layer_norm_gradients(rng):
    for _ in range(20):
        x = Parameter(rng.normal(size=(3, 5)))
        g = Parameter(rng.normal(size=5))
        bta = Parameter(rng.normal(size=5))
        w = rng.normal(size=(3, 5))
        fd_check(lambda: ((ad.softmax(x) + ad.layer_norm(x, g, bta)) * w).sum(), [x, g, bta])


# --- linear recurrence ----------------------------------------------------------------

def loop_recurrence(a, b):
    h = np.zeros_like(b)
    prev = np.zeros_like(b[0])
    for t in range(len(b)):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


@pytest.mark.parametrize("method", ["sequential", "prefix"])
def test_linear_recurrence_matches_loop(method, rng):
    for L in (1, 2, 5, 8, 13):
        a, b = rng.uniform(-1, 1, size=(L, 3)), rng.normal(size=(L, 3))
        got = ad.linear_recurrence(a, b, axis=0, method=method).data
        assert np.max(np.abs(got - loop_recurrence(a, b))) < 1e-12


def test_linear_recurrence_axis_and_gradient(rng):
    for method in ("sequential", "prefix"):
        for _ in range(20):
            a = Parameter(rng.uniform(-1, 1, size=(2, 6, 3)))
            b = Parameter(rng.normal(size=(2, 6, 3)))
            w = rng.normal(size=(2, 6, 3))
            fd_check(lambda: (ad.linear_recurrence(a, b, axis=1, method=method) * w).sum(), [a, b])


def test_linear_recurrence_errors():
    with pytest.raises(DimensionError):
        ad.linear_recurrence(np.ones(3), np.ones(4))
    with pytest.raises(ConfigurationError):
        ad.linear_recurrence(np.ones(3), np.ones(3), method="fft")


# --- properties -----------------------------------------------------------------------

floats = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, (3, 4), elements=floats), arrays(np.float64, (4,), elements=floats))
def test_broadcast_add_gradient_sums_back(x, y):
    a, b = Parameter(x), Parameter(y)
    ad.backward((a + b).sum())
    assert np.array_equal(a.grad, np.ones((3, 4)))
    assert np.array_equal(b.grad, np.full(4, 3.0))


@given(arrays(np.float64, (5, 2), elements=floats))
def test_softmax_rows_are_distributions(x):
    s = ad.softmax(x).data
    assert np.all(s >= 0)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)


@given(
    arrays(np.float64, (7, 2), elements=st.floats(-1, 1)),
    arrays(np.float64, (7, 2), elements=floats),
)
def test_prefix_scan_matches_sequential(a, b):
    seq = ad.linear_recurrence(a, b, method="sequential").data
    pre = ad.linear_recurrence(a, b, method="prefix").data
    assert np.max(np.abs(seq - pre)) < 1e-10


@given(arrays(np.float64, (4,), elements=floats))
def test_unbroadcast_preserves_total(g):
    full = np.broadcast_to(g, (3, 4))
    assert np.allclose(ad.unbroadcast(np.array(full), (4,)), 3 * g)
    assert ad.unbroadcast(np.array(full), (1, 4)).shape == (1, 4)
