import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uwenhance import tensor as T
from uwenhance.errors import BroadcastError, ContractError, ShapeError
from uwenhance.gradcheck import check_gradients, relative_error


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_add_gradient_matches_finite_differences():
    a = T.Tensor([1.0, 1.0], requires_grad=True)
    b = T.Tensor([0.5, -2.0])
    (a + b).sum().backward()
    num = fd_grad(lambda v: float((v + b.data).sum()), a.data.copy())
    assert relative_error(a.grad, num) <= 1e-6
    np.testing.assert_allclose(a.grad, [1.0, 1.0])


def test_matmul_sum_gradient(rng):
    A = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    B = rng.standard_normal((4, 2))
    (A @ B).sum().backward()
    num = fd_grad(lambda v: float((v @ B).sum()), A.data.copy())
    assert relative_error(A.grad, num) <= 1e-6


def test_broadcast_mismatch_raises():
    with pytest.raises(BroadcastError):
        T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones((4,)))


def test_matmul_inner_mismatch_raises():
    with pytest.raises(ShapeError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_backward_needs_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_backward_rejects_complex_loss():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.complex_(x, x).sum().backward()


def test_backward_on_detached_graph_raises():
    with pytest.raises(ContractError):
        T.Tensor(np.ones(3)).sum().backward()


def test_gradients_accumulate_across_calls():
    x = T.Tensor([2.0], requires_grad=True)
    (x * 3).sum().backward()
    (x * 3).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_shared_subexpression_gradient():
    x = T.Tensor([1.5, -0.5], requires_grad=True)
    y = x * x
    (y + y * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3 * x.data ** 2)


def test_no_grad_builds_no_tape():
    x = T.Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2
    assert not y.requires_grad
    assert T.is_grad_enabled()


def test_default_dtype_switch():
    try:
        T.set_default_dtype("real32")
        assert T.Tensor([1, 2]).dtype == np.float32
        assert T.zeros((2,)).dtype == np.float32
        # explicit float data keeps its precision
        assert T.Tensor(np.ones(2)).dtype == np.float64
    finally:
        T.set_default_dtype("real64")
    assert T.Tensor([1, 2]).dtype == np.float64


def test_complex_multiply_gradient_convention(rng):
    # loss = Re(sum(z * w)) with z = a + ib; dL/da = Re(w), dL/db = -Im(w)
    a = T.Tensor(rng.standard_normal(4), requires_grad=True)
    b = T.Tensor(rng.standard_normal(4), requires_grad=True)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    T.real(T.complex_(a, b) * T.Tensor(w)).sum().backward()
    np.testing.assert_allclose(a.grad, w.real)
    np.testing.assert_allclose(b.grad, -w.imag)


def test_take_with_repeats_sums_gradients():
    a = T.Tensor(np.arange(5.0), requires_grad=True)
    T.take(a, np.array([0, 0, 3, 0]), 0).sum().backward()
    np.testing.assert_allclose(a.grad, [3, 0, 0, 1, 0])


def test_getitem_advanced_index_scatter():
    a = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    a[np.array([0, 0, 1]), np.array([1, 1, 2])].sum().backward()
    np.testing.assert_allclose(a.grad, [[0, 2, 0], [0, 0, 1]])


def test_split_concat_roundtrip(rng):
    x = T.Tensor(rng.standard_normal((2, 6)), requires_grad=True)
    parts = T.split(x, 3, axis=-1)
    y = T.concat(parts[::-1], axis=-1)
    w = rng.standard_normal((2, 6))
    (y * w).sum().backward()
    np.testing.assert_allclose(x.grad, np.concatenate([w[:, 4:], w[:, 2:4], w[:, :2]], axis=-1))


@pytest.mark.parametrize("op", ["exp", "log", "sqrt", "sigmoid", "silu", "gelu", "softplus", "relu", "abs"])
def test_unary_forward_values(op, rng):
    x = rng.uniform(0.1, 2.0, 7)
    fn = {"abs": T.abs_}.get(op) or getattr(T, op)
    from scipy import special
    expected = {
        "exp": np.exp(x), "log": np.log(x), "sqrt": np.sqrt(x), "sigmoid": special.expit(x),
        "silu": x * special.expit(x), "gelu": 0.5 * x * (1 + special.erf(x / np.sqrt(2))),
        "softplus": np.log1p(np.exp(x)), "relu": x, "abs": x,
    }[op]
    np.testing.assert_allclose(fn(T.Tensor(x)).data, expected, rtol=1e-12)


def test_registered_ops_pass_gradient_checks():
    from uwenhance.gradcheck import check_ops
    results = check_ops(trials=10, seed=3)
    bad = [(r.name, r.error) for r in results if not r.passed]
    assert not bad


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                  elements=st.floats(-2, 2)))
def test_sum_broadcast_unbroadcast_property(x):
    # gradient of sum(x + row) w.r.t. a broadcast row equals the count of rows
    row = T.Tensor(np.zeros(x.shape[-1]), requires_grad=True)
    (T.Tensor(x) + row).sum().backward()
    np.testing.assert_allclose(row.grad, np.full(x.shape[-1], x.size // x.shape[-1]))


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
def test_mul_gradient_property(x):
    a = T.Tensor(x, requires_grad=True)
    b = T.Tensor(x[::-1].copy(), requires_grad=True)
    rep = check_gradients(lambda: (a * b * a).sum(), {"a": a, "b": b})
    assert rep["a"][0] <= 1e-4 and rep["b"][0] <= 1e-4
