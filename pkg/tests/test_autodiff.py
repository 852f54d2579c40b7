import numpy as np
import pytest

import partsim.autodiff as ad
from partsim.autodiff import (
    AdamState,
    NumericError,
    Parameter,
    RowPlan,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    grad_check,
    zero_grads,
)


def P(name, arr):
    return Parameter(name, np.asarray(arr, dtype=np.float64))


def check(f, params, tol=1e-6, h=1e-6):
    err = grad_check(f, params, h=h)
    assert err < tol, f"fd mismatch {err}"


# ---------------------------------------------------------------------------
# one finite-difference check per primitive


def test_fd_elementwise(rng):
    a = P("a", rng.normal(size=(3, 4)))
    b = P("b", rng.normal(size=(3, 4)))
    check(lambda: ad.tsum(ad.add(a, b)), [a, b])
    check(lambda: ad.tsum(ad.sub(a, b)), [a, b])
    check(lambda: ad.tsum(ad.mul(a, b)), [a, b])


def test_fd_broadcasting(rng):
    a = P("a", rng.normal(size=(3, 4)))
    r = P("r", rng.normal(size=(1, 4)))
    c = P("c", rng.normal(size=(3, 1)))
    check(lambda: ad.tsum(ad.add(a, r)), [a, r])
    check(lambda: ad.tsum(ad.mul(a, c)), [a, c])


def test_fd_matmul_transpose_reshape(rng):
    a = P("a", rng.normal(size=(3, 4)))
    b = P("b", rng.normal(size=(4, 2)))
    check(lambda: ad.tsum(ad.matmul(a, b)), [a, b])
    check(lambda: ad.tsum(ad.mul(ad.transpose(a), ad.const(np.arange(12.0).reshape(4, 3)))), [a])
    check(lambda: ad.tsum(ad.mul(ad.reshape(a, (2, 6)), ad.const(np.arange(12.0).reshape(2, 6)))), [a])


def test_fd_concat(rng):
    a = P("a", rng.normal(size=(2, 3)))
    b = P("b", rng.normal(size=(4, 3)))
    w = ad.const(np.arange(18.0).reshape(6, 3))
    check(lambda: ad.tsum(ad.mul(ad.concat([a, b], axis=0), w)), [a, b])


def test_fd_reductions(rng):
    a = P("a", rng.normal(size=(3, 4)))
    check(lambda: ad.tsum(a), [a])
    check(lambda: ad.tmean(a), [a])
    check(lambda: ad.tsum(ad.tsum(a, axis=1)), [a])
    check(lambda: ad.tsum(ad.tmean(a, axis=0, keepdims=True)), [a])


def test_fd_nonlinearities(rng):
    a = P("a", rng.normal(size=(3, 4)))
    s = P("s", [[0.3]])
    check(lambda: ad.tsum(ad.tanh(a)), [a])
    check(lambda: ad.tsum(ad.logistic(a)), [a])
    check(lambda: ad.tsum(ad.prelu(a, s)), [a, s])


def test_fd_softmaxes(rng):
    a = P("a", rng.normal(size=(4, 5)))
    w = ad.const(np.arange(20.0).reshape(4, 5))
    mask = np.where(rng.random((4, 5)) < 0.3, -1e30, 0.0)
    mask[:, 0] = 0.0  # keep at least one live column per row
    check(lambda: ad.tsum(ad.mul(ad.row_softmax(a), w)), [a])
    check(lambda: ad.tsum(ad.mul(ad.softmax_last(a), w)), [a])
    check(lambda: ad.tsum(ad.mul(ad.masked_softmax_last(a, mask), w)), [a])
    b = P("b", rng.normal(size=(2, 3, 4)))
    wb = ad.const(np.arange(24.0).reshape(2, 3, 4))
    check(lambda: ad.tsum(ad.mul(ad.softmax_last(b), wb)), [b])


def test_fd_affine_ops(rng):
    x = P("x", rng.normal(size=(5, 3)))
    w = P("w", rng.normal(size=(3, 2)))
    b = P("b", rng.normal(size=(1, 2)))
    check(lambda: ad.tsum(ad.affine(x, w, b)), [x, w, b])
    p1 = P("p1", rng.normal(size=(5, 2)))
    p2 = P("p2", rng.normal(size=(5, 4)))
    wc = P("wc", rng.normal(size=(6, 3)))
    bc = P("bc", rng.normal(size=(1, 3)))
    check(lambda: ad.tsum(ad.affine_cat([p1, p2], wc, bc)), [p1, p2, wc, bc])


def test_fd_batched_matmul(rng):
    a = P("a", rng.normal(size=(2, 3, 4)))
    b = P("b", rng.normal(size=(2, 4, 5)))
    check(lambda: ad.tsum(ad.bmatmul(a, b)), [a, b])
    check(lambda: ad.tsum(ad.mul(ad.btranspose(a), ad.const(np.arange(24.0).reshape(2, 4, 3)))), [a])


def test_fd_vector_ops(rng):
    a = P("a", rng.normal(size=(4, 6)))
    b = P("b", rng.normal(size=(4, 6)))
    check(lambda: ad.tsum(ad.dot(a, b)), [a, b])
    check(lambda: ad.tsum(ad.l2norm(a)), [a])
    check(lambda: ad.tsum(ad.cosine(a, b)), [a, b])


def test_fd_row_plans(rng):
    idx = np.array([0, 2, 2, 1, 0])
    plan = RowPlan(idx, 3)
    a = P("a", rng.normal(size=(5, 4)))
    s = P("s", rng.normal(size=(3, 4)))
    w5 = ad.const(np.arange(20.0).reshape(5, 4))
    w3 = ad.const(np.arange(12.0).reshape(3, 4))
    check(lambda: ad.tsum(ad.mul(ad.scatter_rows(a, plan), w3)), [a])
    check(lambda: ad.tsum(ad.mul(ad.gather_rows(s, plan), w5)), [s])


# ---------------------------------------------------------------------------
# semantics


def test_scatter_gather_values():
    plan = RowPlan(np.array([1, 0, 1]), 2)
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    assert ad.scatter_rows(x, plan).data.tolist() == [[2.0], [4.0]]
    s = Tensor(np.array([[5.0], [7.0]]))
    assert ad.gather_rows(s, plan).data.tolist() == [[7.0], [5.0], [7.0]]


def test_rowplan_empty_rows():
    plan = RowPlan(np.array([2, 2]), 4)  # rows 0,1,3 receive nothing
    x = Tensor(np.ones((2, 3)))
    out = ad.scatter_rows(x, plan)
    assert out.data[2].tolist() == [2.0, 2.0, 2.0]
    assert np.all(out.data[[0, 1, 3]] == 0.0)


def test_masked_softmax_matches_composition(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    mask = np.where(rng.random((3, 4)) < 0.5, -1e30, 0.0)
    mask[:, 1] = 0.0
    direct = ad.masked_softmax_last(a, mask).data
    composed = ad.softmax_last(ad.add(a, ad.const(mask))).data
    assert np.array_equal(direct, composed)


def test_backward_accumulates():
    p = P("p", [[2.0]])
    with Tape():
        out = ad.tsum(ad.mul(p, p))
        backward(out)
        backward(out)
    assert p.grad.item() == pytest.approx(8.0)  # 2x per pass, twice


def test_backward_needs_scalar():
    p = P("p", [[1.0, 2.0]])
    with Tape():
        out = ad.mul(p, p)
        with pytest.raises(ShapeError):
            backward(out)


def test_backward_off_tape():
    p = P("p", [[1.0]])
    out = ad.mul(p, p)  # no tape active: not recorded
    with pytest.raises(RuntimeError):
        backward(out)


def test_released_tape_refuses_backward():
    p = P("p", [[3.0]])
    with Tape() as tape:
        out = ad.tsum(ad.mul(p, p))
    backward(out)
    tape.release()
    with pytest.raises(RuntimeError, match="released"):
        backward(out)
    assert p.grad is not None  # the first backward survived


def test_nan_rejected():
    with pytest.raises(NumericError):
        Tensor(np.array([np.nan]))
    big = Tensor(np.array([[1e308]]))
    with Tape(), np.errstate(over="ignore"):
        with pytest.raises(NumericError):
            ad.mul(big, big)  # overflow to inf inside an op


def test_shape_errors():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError):
        ad.add(a, b)
    with pytest.raises(ShapeError):
        ad.matmul(a, b)
    with pytest.raises(ShapeError):
        ad.affine(a, Tensor(np.ones((3, 2))), Tensor(np.ones((2,))))  # bias must be (1, d)
    with pytest.raises(ShapeError):
        ad.bmatmul(a, b)


def test_parameter_requires_name():
    with pytest.raises(ValueError):
        Parameter("", np.ones(1))


def test_adam_quadratic_convergence():
    p = P("p", [[5.0, -3.0]])
    state = AdamState(lr=0.1)
    for _ in range(300):
        with Tape() as tape:
            loss = ad.tsum(ad.mul(p, p))
        backward(loss)
        tape.release()
        adam_step([p], state)
    assert np.abs(p.data).max() < 1e-3


def test_adam_requires_grads():
    p = P("p", [[1.0]])
    with pytest.raises(ValueError):
        adam_step([p], AdamState())


def test_adam_duplicate_names():
    p1, p2 = P("x", [[1.0]]), P("x", [[2.0]])
    for p in (p1, p2):
        p.grad = np.ones((1, 1))
    with pytest.raises(ValueError):
        adam_step([p1, p2], AdamState())


def test_zero_grads():
    p = P("p", [[1.0]])
    p.grad = np.ones((1, 1))
    zero_grads([p])
    assert p.grad is None
