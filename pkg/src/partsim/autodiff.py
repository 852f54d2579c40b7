"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Ops executed inside a `with Tape():` block are recorded; `backward(scalar)`
replays the tape in reverse and accumulates vector-Jacobian products into
`.grad` of every tensor on the path.  Gradients are only propagated into
tensors with requires_grad set, and per-parent backward closures are built
lazily at record time, so constant operands (selection matrices, masks)
cost nothing at backward time.

Every op validates shapes eagerly and checks its result for NaN/Inf; a
violation raises NumericError at the op that produced it rather than
surfacing later as a poisoned loss.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


class ShapeError(ValueError):
    """Operand shapes do not fit the op."""


class NumericError(FloatingPointError):
    """An op produced (or was given) a NaN or infinity."""


_TAPES: list = []


class Tape:
    """Linear record of ops for one forward pass."""

    __slots__ = ("nodes", "released")

    def __init__(self):
        self.nodes = []
        self.released = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        assert _TAPES and _TAPES[-1] is self
        _TAPES.pop()

    def release(self):
        """Drop the recorded graph so its memory can be reclaimed at once.

        Recorded tensors and tapes reference each other in cycles, which
        makes large graphs wait for a full garbage collection; a released
        tape frees by reference counting instead.  backward() on a released
        tape is an error.
        """
        self.nodes.clear()
        self.released = True


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NumericError("tensor data contains NaN or Inf")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named learnable tensor; names must be unique within a model."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        if not name:
            raise ValueError("parameter name must be nonempty")
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _out(data, op: str, pairs) -> Tensor:
    """Wrap an op result, validate it, and record backward closures."""
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced NaN or Inf")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t._tape = None
    live = tuple((p, fn) for p, fn in pairs if p.requires_grad)
    t.requires_grad = bool(live)
    if live and _TAPES:
        tape = _TAPES[-1]
        tape.nodes.append((t, live))
        t._tape = tape
    return t


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def const(data) -> Tensor:
    """Wrap a trusted float64 array as a non-grad tensor without validation.

    For internally built structure matrices (adjacency, masks, selectors)
    that are known finite; skips the copy and the finiteness scan of the
    Tensor constructor.
    """
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    t._tape = None
    return t


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _bshape(sa, sb, op):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{op}: shapes {sa} and {sb} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _bshape(a.shape, b.shape, "add")
    return _out(
        a.data + b.data,
        "add",
        ((a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(g, b.data.shape))),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _bshape(a.shape, b.shape, "sub")
    return _out(
        a.data - b.data,
        "sub",
        ((a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(-g, b.data.shape))),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _bshape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _out(
        ad * bd,
        "mul",
        ((a, lambda g: _unbroadcast(g * bd, ad.shape)), (b, lambda g: _unbroadcast(g * ad, bd.shape))),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return _out(
        ad @ bd,
        "matmul",
        ((a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)),
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.data.shape}")
    return _out(a.data.T.copy(), "transpose", ((a, lambda g: g.T),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _out(data, "reshape", ((a, lambda g: g.reshape(old)),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    nd = tensors[0].data.ndim
    if any(t.data.ndim != nd for t in tensors) or not (0 <= axis < nd):
        raise ShapeError("concat: rank mismatch or bad axis")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    pairs = []
    off = 0
    for t in tensors:
        size = t.data.shape[axis]
        lo, hi = off, off + size

        def fn(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)].copy()

        pairs.append((t, fn))
        off += size
    return _out(data, "concat", pairs)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def fn(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return _out(a.data.sum(axis=axis, keepdims=keepdims), "sum", ((a, fn),))


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def fn(g):
        if axis is None:
            return np.broadcast_to(g / count, shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / count, shape).copy()

    return _out(a.data.mean(axis=axis, keepdims=keepdims), "mean", ((a, fn),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _out(y, "tanh", ((a, lambda g: g * (1.0 - y * y)),))


def logistic(a) -> Tensor:
    """Numerically stable 1/(1+exp(-x))."""
    a = _as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _out(y, "logistic", ((a, lambda g: g * y * (1.0 - y)),))


def prelu(a, slope) -> Tensor:
    """max(x, 0) + slope * min(x, 0) with a learnable scalar slope."""
    a, slope = _as_tensor(a), _as_tensor(slope)
    if slope.data.size != 1:
        raise ShapeError(f"prelu slope must be scalar, got shape {slope.data.shape}")
    x = a.data
    s = slope.data.item()
    neg = x < 0
    y = np.where(neg, s * x, x)

    def fslope(g):
        return np.asarray((g * np.where(neg, x, 0.0)).sum()).reshape(slope.data.shape)

    return _out(
        y,
        "prelu",
        ((a, lambda g: np.where(neg, s * g, g)), (slope, fslope)),
    )


def row_softmax(a) -> Tensor:
    """Softmax over the last axis of a 2-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"row_softmax expects 2-D, got {a.data.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _out(
        y, "row_softmax", ((a, lambda g: (g - (g * y).sum(axis=1, keepdims=True)) * y),)
    )


def softmax_last(a) -> Tensor:
    """Softmax over the last axis of a tensor of any rank >= 1."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeError("softmax_last expects at least 1-D")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _out(
        y, "softmax_last", ((a, lambda g: (g - (g * y).sum(axis=-1, keepdims=True)) * y),)
    )


def masked_softmax_last(a, mask: np.ndarray) -> Tensor:
    """softmax_last(a + mask) with a constant additive mask, in one op.

    The mask is a plain array (broadcastable to a's shape); no gradient
    flows to it.  Large negative entries zero out the masked positions.
    """
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeError("masked_softmax_last expects at least 1-D")
    z = a.data + mask
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _out(
        y,
        "masked_softmax_last",
        ((a, lambda g: (g - (g * y).sum(axis=-1, keepdims=True)) * y),),
    )


def affine_cat(parts, w, b) -> Tensor:
    """concat(parts, axis=1) @ w + b without materializing the concat.

    The weight rows are split to match the part widths, so each part
    multiplies its own slice; forward and backward avoid the wide
    intermediate entirely.
    """
    parts = [_as_tensor(p) for p in parts]
    w, b = _as_tensor(w), _as_tensor(b)
    if w.data.ndim != 2 or not parts:
        raise ShapeError("affine_cat needs parts and a 2-D weight")
    widths = []
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError("affine_cat parts must be 2-D with equal row counts")
        widths.append(p.data.shape[1])
    if sum(widths) != w.data.shape[0]:
        raise ShapeError(
            f"affine_cat: part widths {widths} do not sum to weight rows {w.data.shape[0]}"
        )
    if b.data.shape != (1, w.data.shape[1]):
        raise ShapeError(f"affine_cat: bias must be (1, {w.data.shape[1]}), got {b.data.shape}")
    offs = np.cumsum([0] + widths)
    blocks = [w.data[offs[i] : offs[i + 1]] for i in range(len(parts))]
    acc = parts[0].data @ blocks[0]
    for p, blk in zip(parts[1:], blocks[1:]):
        acc += p.data @ blk
    acc += b.data

    def wgrad(g, datas=[p.data for p in parts]):
        return np.concatenate([d.T @ g for d in datas], axis=0)

    pairs = [
        (p, (lambda blk: (lambda g: g @ blk.T))(blk)) for p, blk in zip(parts, blocks)
    ]
    pairs.append((w, wgrad))
    pairs.append((b, lambda g: g.sum(axis=0, keepdims=True)))
    return _out(acc, "affine_cat", tuple(pairs))


def affine(x, w, b) -> Tensor:
    """x @ w + b with a broadcast bias row, in one op."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.data.shape} and {w.data.shape}")
    if b.data.shape != (1, w.data.shape[1]):
        raise ShapeError(f"affine: bias must be (1, {w.data.shape[1]}), got {b.data.shape}")
    xd, wd = x.data, w.data
    return _out(
        xd @ wd + b.data,
        "affine",
        (
            (x, lambda g: g @ wd.T),
            (w, lambda g: xd.T @ g),
            (b, lambda g: g.sum(axis=0, keepdims=True)),
        ),
    )


def btranspose(a) -> Tensor:
    """Swap the last two axes of a stacked-matrix tensor."""
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError(f"btranspose expects at least 2-D, got {a.data.shape}")
    return _out(a.data.swapaxes(-1, -2), "btranspose", ((a, lambda g: g.swapaxes(-1, -2)),))


def bmatmul(a, b) -> Tensor:
    """Matrix product over matching stacks: (..., M, K) @ (..., K, N)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if (
        a.data.ndim < 3
        or a.data.ndim != b.data.ndim
        or a.data.shape[:-2] != b.data.shape[:-2]
        or a.data.shape[-1] != b.data.shape[-2]
    ):
        raise ShapeError(f"bmatmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return _out(
        ad @ bd,
        "bmatmul",
        ((a, lambda g: g @ bd.swapaxes(-1, -2)), (b, lambda g: ad.swapaxes(-1, -2) @ g)),
    )


def dot(a, b) -> Tensor:
    """Inner product of two same-shape tensors, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"dot: shape mismatch {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _out(
        np.asarray((ad * bd).sum()),
        "dot",
        ((a, lambda g: g * bd), (b, lambda g: g * ad)),
    )


def l2norm(a) -> Tensor:
    a = _as_tensor(a)
    n = float(np.sqrt((a.data * a.data).sum()))
    denom = n + 1e-12
    ad = a.data
    return _out(np.asarray(n), "l2norm", ((a, lambda g: g * ad / denom),))


_COS_EPS = 1e-12


def cosine(a, b) -> Tensor:
    """Cosine similarity; 1-D inputs give a scalar, 2-D give one value per row.

    The denominator carries a 1e-12 guard so zero vectors yield 0 instead of
    a division error; the backward pass differentiates the guarded form.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim not in (1, 2):
        raise ShapeError(f"cosine: bad shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    ax = ad.ndim - 1
    s = (ad * bd).sum(axis=ax)
    na = np.sqrt((ad * ad).sum(axis=ax))
    nb = np.sqrt((bd * bd).sum(axis=ax))
    denom = na * nb + _COS_EPS
    c = s / denom

    if ad.ndim == 1:
        def fa(g):
            return g * (bd - c * nb * ad / (na + _COS_EPS)) / denom

        def fb(g):
            return g * (ad - c * na * bd / (nb + _COS_EPS)) / denom
    else:
        def fa(g):
            gg = g[:, None]
            return gg * (bd - (c * nb)[:, None] * ad / (na + _COS_EPS)[:, None]) / denom[:, None]

        def fb(g):
            gg = g[:, None]
            return gg * (ad - (c * na)[:, None] * bd / (nb + _COS_EPS)[:, None]) / denom[:, None]

    return _out(np.asarray(c), "cosine", ((a, fa), (b, fb)))


class RowPlan:
    """Precomputed layout for repeated row gather/scatter.

    idx maps each of `count` slots to one of `rows` target rows.  Summing
    slot values into rows goes through a cached one-entry-per-column sparse
    matrix (2-D case) or a stable sort plus add.reduceat, both much faster
    than repeated fancy-index accumulation.
    """

    __slots__ = ("idx", "rows", "order", "starts", "targets", "_csr")

    def __init__(self, idx, rows: int):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= rows):
            raise ValueError("row index out of range")
        self.idx = idx
        self.rows = rows
        self.order = np.argsort(idx, kind="stable")
        s = idx[self.order]
        if idx.size:
            firsts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
            self.starts = firsts
            self.targets = s[firsts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.targets = np.zeros(0, dtype=np.int64)
        self._csr = None

    def _matrix(self):
        if self._csr is None:
            indptr = np.zeros(self.rows + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.idx, minlength=self.rows), out=indptr[1:])
            self._csr = sparse.csr_matrix(
                (np.ones(self.idx.size), self.order, indptr),
                shape=(self.rows, self.idx.size),
            )
        return self._csr

    def sum_into_rows(self, x: np.ndarray) -> np.ndarray:
        if not self.idx.size:
            return np.zeros((self.rows,) + x.shape[1:])
        if x.ndim == 2:
            return self._matrix() @ x
        out = np.zeros((self.rows,) + x.shape[1:])
        out[self.targets] = np.add.reduceat(x[self.order], self.starts, axis=0)
        return out


def gather_rows(a, plan: RowPlan) -> Tensor:
    """out[i] = a[plan.idx[i]] with summed-scatter backward."""
    a = _as_tensor(a)
    if a.data.shape[0] != plan.rows:
        raise ShapeError(f"gather_rows: tensor has {a.data.shape[0]} rows, plan expects {plan.rows}")
    return _out(a.data[plan.idx], "gather_rows", ((a, plan.sum_into_rows),))


def scatter_rows(a, plan: RowPlan) -> Tensor:
    """out[r] = sum of a[i] over plan.idx[i] == r; adjoint of gather_rows."""
    a = _as_tensor(a)
    if a.data.shape[0] != plan.idx.size:
        raise ShapeError(f"scatter_rows: tensor has {a.data.shape[0]} rows, plan has {plan.idx.size} slots")
    return _out(plan.sum_into_rows(a.data), "scatter_rows", ((a, lambda g: g[plan.idx]),))


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(x) into .grad for all recorded ancestors of out.

    out must be a single-element tensor recorded on a tape.  Repeated calls
    add another copy of the gradient.
    """
    if not isinstance(out, Tensor):
        raise TypeError("backward expects a Tensor")
    if out.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {out.data.shape}")
    if out._tape is None:
        raise RuntimeError("output was not recorded on an active Tape")
    if out._tape.released:
        raise RuntimeError("tape was released; its graph is gone")
    gmap = {id(out): [out, np.ones_like(out.data)]}
    for node_out, pairs in reversed(out._tape.nodes):
        ent = gmap.get(id(node_out))
        if ent is None:
            continue
        g = ent[1]
        for parent, fn in pairs:
            gp = fn(g)
            pent = gmap.get(id(parent))
            if pent is None:
                gmap[id(parent)] = [parent, gp]
            else:
                pent[1] = pent[1] + gp
    for t, g in gmap.values():
        if t._tape is None:
            # leaf (parameter or user input): own the buffer outright
            t.grad = g.copy() if t.grad is None else t.grad + g
        else:
            t.grad = g if t.grad is None else t.grad + g


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment estimates per parameter name, plus the step count."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1 and lr > 0 and eps > 0):
            raise ValueError("bad Adam hyperparameters")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, state: AdamState) -> None:
    """One Adam update with bias correction; clears grads afterwards."""
    params = list(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape mismatch for {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[p.name] = m
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f, params, h: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    f() must rebuild its forward pass from the current parameter values and
    return a scalar Tensor.  Coordinates where both gradients are below 1e-6
    contribute their absolute difference instead (the ratio of two numbers at
    the noise floor is meaningless).
    """
    params = list(params)
    zero_grads(params)
    with Tape():
        out = f()
        backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grads(params)
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.ravel()
        an_flat = an.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().data.item()
            flat[i] = orig - h
            fm = f().data.item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            a = an_flat[i]
            scale = max(abs(a), abs(fd))
            err = abs(a - fd) if scale < 1e-6 else abs(a - fd) / scale
            if err > worst:
                worst = err
    return float(worst)
