import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mega import tensor as T
from mega.tensor import Tensor, cross_entropy, embedding, gelu, layer_norm, log_softmax, no_grad, softmax
from mega.util import NumericsError


def fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at float64 array x."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_matches_naive_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 7)).astype(np.float64)
    b = rng.normal(size=(7, 3)).astype(np.float64)
    got = (Tensor(a) @ Tensor(b)).data
    np.testing.assert_allclose(got, naive_matmul(a, b), rtol=1e-12)


def test_batched_matmul_matches_per_slice():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 3, 4, 5))
    b = rng.normal(size=(2, 3, 5, 6))
    got = (Tensor(a) @ Tensor(b)).data
    for i in range(2):
        for j in range(3):
            np.testing.assert_allclose(got[i, j], a[i, j] @ b[i, j], rtol=1e-12)


def test_softmax_closed_form():
    x = Tensor(np.array([math.log(2.0), 0.0]))
    y = softmax(x).data
    np.testing.assert_allclose(y, [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(4, 9)) * 10)
    y = softmax(x, axis=-1).data
    np.testing.assert_allclose(y.sum(axis=-1), np.ones(4), atol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance(xs, c):
    x = np.array(xs, dtype=np.float64)
    a = softmax(Tensor(x)).data
    b = softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_log_softmax_agrees_with_log_of_softmax():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 11)) * 5
    np.testing.assert_allclose(
        log_softmax(Tensor(x)).data, np.log(softmax(Tensor(x)).data), atol=1e-12
    )


def test_uniform_cross_entropy_is_log_vocab():
    v = 259
    logits = Tensor(np.zeros((4, v)))
    loss = cross_entropy(logits, np.array([0, 5, 100, 258]))
    assert abs(loss.item() - math.log(v)) < 1e-9


def test_cross_entropy_mask_selects_positions():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 10))
    targets = rng.integers(0, 10, size=6)
    mask = np.array([0, 0, 1, 1, 1, 0], dtype=np.float64)
    full = cross_entropy(Tensor(logits[2:5]), targets[2:5]).item()
    masked = cross_entropy(Tensor(logits), targets, mask).item()
    assert abs(full - masked) < 1e-12


def test_cross_entropy_all_masked_raises():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((3, 5))), np.zeros(3, dtype=int), np.zeros(3))


def test_layer_norm_normalizes_last_axis():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 16)) * 3 + 7
    g = Tensor(np.ones(16))
    b = Tensor(np.zeros(16))
    y = layer_norm(Tensor(x), g, b).data
    np.testing.assert_allclose(y.mean(axis=-1), np.zeros(4), atol=1e-9)
    np.testing.assert_allclose(y.var(axis=-1), np.ones(4), atol=1e-4)


def test_gelu_reference_points():
    x = Tensor(np.array([0.0, 1.0, -1.0, 3.0]))
    y = gelu(x).data
    assert y[0] == 0.0
    assert abs(y[1] - 0.841192) < 1e-5
    assert abs(y[2] - (-0.158808)) < 1e-5
    assert abs(y[3] - 2.996363) < 1e-5


def test_embedding_gathers_and_scatters():
    table = Tensor(np.arange(12, dtype=np.float64).reshape(4, 3), requires_grad=True)
    ids = np.array([1, 1, 3])
    out = embedding(table, ids)
    np.testing.assert_allclose(out.data[0], [3, 4, 5])
    out.sum().backward()
    # duplicated id accumulates twice
    np.testing.assert_allclose(table.grad[:, 0], [0, 2, 0, 1])


def test_embedding_rejects_out_of_range():
    table = Tensor(np.zeros((4, 3)))
    with pytest.raises(IndexError):
        embedding(table, np.array([4]))


# -- gradient checks against finite differences ----------------------------


def check_grad(build, x0, tol=1e-7):
    """build(x_tensor) -> scalar Tensor; compares backward to FD."""
    t = Tensor(x0.astype(np.float64), requires_grad=True)
    loss = build(t)
    loss.backward()
    num = fd_grad(lambda x: build(Tensor(x)).item(), x0.copy())
    assert rel_err(t.grad, num) < tol, f"rel err {rel_err(t.grad, num)}"


def test_grad_add_mul_broadcast():
    rng = np.random.default_rng(10)
    x0 = rng.normal(size=(3, 4))
    w = rng.normal(size=(4,))
    check_grad(lambda t: ((t * Tensor(w) + Tensor(w)) ** 2.0).sum(), x0)


def test_grad_matmul():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(3, 5))
    b = rng.normal(size=(5, 2))
    check_grad(lambda t: ((t @ Tensor(b)) ** 2.0).sum(), x0)


def test_grad_matmul_right_operand_broadcast():
    rng = np.random.default_rng(12)
    w0 = rng.normal(size=(4, 3))
    a = rng.normal(size=(2, 5, 4))
    check_grad(lambda t: ((Tensor(a) @ t).tanh()).sum(), w0)


def test_grad_softmax():
    rng = np.random.default_rng(13)
    x0 = rng.normal(size=(4, 6))
    w = rng.normal(size=(4, 6))
    check_grad(lambda t: (softmax(t, axis=-1) * Tensor(w)).sum(), x0)


def test_grad_log_softmax():
    rng = np.random.default_rng(14)
    x0 = rng.normal(size=(3, 7))
    w = rng.normal(size=(3, 7))
    check_grad(lambda t: (log_softmax(t, axis=-1) * Tensor(w)).sum(), x0)


def test_grad_layer_norm_all_inputs():
    rng = np.random.default_rng(15)
    x0 = rng.normal(size=(3, 8))
    g0 = rng.normal(size=(8,))
    b0 = rng.normal(size=(8,))
    w = rng.normal(size=(3, 8))

    def build_x(t):
        return (layer_norm(t, Tensor(g0), Tensor(b0)) * Tensor(w)).sum()

    check_grad(build_x, x0, tol=1e-6)

    x = Tensor(x0)
    g = Tensor(g0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    (layer_norm(x, g, b) * Tensor(w)).sum().backward()
    num_g = fd_grad(lambda v: (layer_norm(x, Tensor(v), Tensor(b0)) * Tensor(w)).sum().item(), g0.copy())
    num_b = fd_grad(lambda v: (layer_norm(x, Tensor(g0), Tensor(v)) * Tensor(w)).sum().item(), b0.copy())
    assert rel_err(g.grad, num_g) < 1e-7
    assert rel_err(b.grad, num_b) < 1e-7


def test_grad_gelu():
    rng = np.random.default_rng(16)
    x0 = rng.normal(size=(20,)).reshape(4, 5) * 2
    check_grad(lambda t: (gelu(t) ** 2.0).sum(), x0)


def test_grad_cross_entropy_with_mask():
    rng = np.random.default_rng(17)
    x0 = rng.normal(size=(5, 9))
    targets = rng.integers(0, 9, size=5)
    mask = np.array([1, 0, 1, 1, 0], dtype=np.float64)
    check_grad(lambda t: cross_entropy(t, targets, mask), x0)


def test_grad_reductions_and_shape_ops():
    rng = np.random.default_rng(18)
    x0 = rng.normal(size=(2, 3, 4))

    def build(t):
        y = t.transpose((1, 0, 2)).reshape(3, 8)
        return (y.mean(axis=0) * Tensor(np.arange(8.0))).sum() + (y.exp().sum() / 100.0)

    check_grad(build, x0)


def test_grad_embedding():
    rng = np.random.default_rng(19)
    t0 = rng.normal(size=(6, 4))
    ids = np.array([0, 2, 2, 5])
    w = rng.normal(size=(4, 4))
    check_grad(lambda t: (embedding(t, ids) * Tensor(w)).sum(), t0)


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0
    y.sum().backward()
    assert abs(x.grad[0] - 7.0) < 1e-12


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y.requires_grad is False
    assert y._parents == ()


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_debug_checks_catch_non_finite():
    T.set_debug_checks(True)
    try:
        with np.errstate(divide="ignore"):
            with pytest.raises(NumericsError):
                Tensor(np.array([0.0])).log()
    finally:
        T.set_debug_checks(False)


def test_float32_default_and_float64_opt_in():
    a = Tensor([1.0, 2.0])
    assert a.dtype == np.float32
    b = Tensor(np.array([1.0, 2.0], dtype=np.float64))
    assert b.dtype == np.float64


@given(st.integers(0, 2**32 - 1))
def test_reshape_transpose_roundtrip(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4))
    t = Tensor(x, requires_grad=True)
    y = t.transpose((2, 0, 1)).transpose((1, 2, 0)).reshape(2, 3, 4)
    np.testing.assert_array_equal(y.data, x)


def test_backward_frees_graph_without_gc():
    # graph closures capture their own output tensor, a reference cycle
    # the refcounter cannot free; backward must sever the links so the
    # whole step graph dies immediately, no cycle collector needed
    import gc
    import weakref

    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(8, 16)).astype(np.float32), requires_grad=True)
    x = rng.normal(size=(4, 8)).astype(np.float32)

    gc.disable()
    try:
        h = Tensor(x) @ w
        s = softmax(h)
        loss = (s * s).sum()
        w.zero_grad()
        loss.backward()
        assert w.grad is not None
        probes = [weakref.ref(h), weakref.ref(s), weakref.ref(loss)]
        del h, s, loss
        assert all(p() is None for p in probes)
    finally:
        gc.enable()
