"""Minimal reverse-mode autodiff on numpy arrays.

Supports exactly the ops the avatar pipeline needs: elementwise arithmetic,
matmul, 1-D/2-D convolution, nearest 2x upsampling, bilinear plane sampling,
activations (leaky-relu / softplus / sigmoid / exp), reductions and cumsum.
Graph construction and the backward walk are single threaded; kernels lean on
BLAS and np.bincount so the reduction order is deterministic.
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float32


class EngineError(RuntimeError):
    pass


class ShapeError(EngineError):
    pass


class UnsupportedOpError(EngineError):
    pass


def _as_array(x, dtype):
    if dtype is not None:
        if isinstance(x, np.ndarray):
            return x.astype(dtype, copy=False)
        return np.asarray(x, dtype=dtype)
    # no explicit dtype: keep float arrays as they are, default everything else
    if isinstance(x, np.ndarray) and x.dtype in (np.float32, np.float64):
        return x
    return np.asarray(x, dtype=DEFAULT_DTYPE)


def _promote(*tensors):
    for t in tensors:
        if t.data.dtype == np.float64:
            return np.float64
    return tensors[0].data.dtype


class Tensor:
    """A numpy array plus the graph edges needed for reverse mode.

    `grad` is lazily allocated during backward; leaves created with
    requires_grad=True receive d(loss)/d(self) there.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, op="leaf",
                 parents=(), backward=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def permute(self, *axes):
        return permute(self, axes if len(axes) > 1 else axes[0])

    @property
    def T(self):
        return permute(self, tuple(range(self.data.ndim))[::-1])


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def make_node(data, parents, backward, op, dtype=None) -> Tensor:
    """Build a graph node with an explicit backward closure.

    The backward closure receives the upstream gradient and is responsible
    for accumulating into the parents via `accumulate`.
    """
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, dtype=dtype or (parents[0].data.dtype if parents else None),
                  op=op, parents=parents, backward=backward if req else None)


def accumulate(t: Tensor, g: np.ndarray):
    """Add g into t's grad buffer (topological order makes this deterministic)."""
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    t.grad = g if t.grad is None else t.grad + g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _coerce(b, a)
    out = a.data + b.data

    def bwd(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(g, b.data.shape))

    return make_node(out, (a, b), bwd, "add", dtype=_promote(a, b))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _coerce(b, a)
    out = a.data - b.data

    def bwd(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(-g, b.data.shape))

    return make_node(out, (a, b), bwd, "sub", dtype=_promote(a, b))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _coerce(b, a)
    out = a.data * b.data

    def bwd(g):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return make_node(out, (a, b), bwd, "mul", dtype=_promote(a, b))


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _coerce(b, a)
    out = a.data / b.data

    def bwd(g):
        accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return make_node(out, (a, b), bwd, "div", dtype=_promote(a, b))


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate(a, -g)

    return make_node(-a.data, (a,), bwd, "neg")


def pow_(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def bwd(g):
        accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return make_node(out, (a,), bwd, "pow")


def square(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate(a, g * 2.0 * a.data)

    return make_node(a.data * a.data, (a,), bwd, "square")


def abs_(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    def bwd(g):
        accumulate(a, g * np.sign(a.data))

    return make_node(np.abs(a.data), (a,), bwd, "abs")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        accumulate(a, g * out)

    return make_node(out, (a,), bwd, "exp")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bwd(g):
        accumulate(a, g * (0.5 / out))

    return make_node(out, (a,), bwd, "sqrt")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data >= 0
    out = np.where(mask, a.data, slope * a.data)

    def bwd(g):
        accumulate(a, np.where(mask, g, g * slope))

    return make_node(out, (a,), bwd, "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    # stable: max(x,0) + log1p(exp(-|x|)); derivative is sigmoid(x)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        accumulate(a, g * _sigmoid_np(x))

    return make_node(out, (a,), bwd, "softplus")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)

    def bwd(g):
        accumulate(a, g * out * (1.0 - out))

    return make_node(out, (a,), bwd, "sigmoid")


# -- shape ops ----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def bwd(g):
        accumulate(a, g.reshape(old))

    return make_node(a.data.reshape(shape), (a,), bwd, "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        accumulate(a, g.transpose(inv))

    return make_node(a.data.transpose(axes), (a,), bwd, "permute")


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[key] = g  # basic indexing only: slices never alias
        accumulate(a, gx)

    return make_node(out, (a,), bwd, "getitem")


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return make_node(out, tuple(tensors), bwd, "concat")


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return make_node(out, (a,), bwd, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else (
        np.prod([a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def cumsum(a: Tensor, axis: int) -> Tensor:
    out = np.cumsum(a.data, axis=axis)

    def bwd(g):
        accumulate(a, np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return make_node(out, (a,), bwd, "cumsum")


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            accumulate(a, g @ b.data.T)
        if b.requires_grad:
            accumulate(b, a.data.T @ g)

    return make_node(out, (a, b), bwd, "matmul", dtype=_promote(a, b))


# -- convolution / upsampling --------------------------------------------------

_COL_CACHE: dict = {}


def _im2col_indices(C, H, W, kh, kw, sh, sw, ph, pw):
    key = (C, H, W, kh, kw, sh, sw, ph, pw)
    hit = _COL_CACHE.get(key)
    if hit is not None:
        return hit
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    c = np.repeat(np.arange(C), kh * kw)                      # (C*kh*kw,)
    ki = np.tile(np.repeat(np.arange(kh), kw), C)
    kj = np.tile(np.tile(np.arange(kw), kh), C)
    oi = np.repeat(np.arange(Ho) * sh, Wo)                    # (Ho*Wo,)
    oj = np.tile(np.arange(Wo) * sw, Ho)
    rows = (c[:, None] * Hp + ki[:, None] + oi[None, :]) * Wp + (kj[:, None] + oj[None, :])
    flat = rows.astype(np.int64)                              # (C*kh*kw, Ho*Wo) into padded flat
    _COL_CACHE[key] = (flat, Hp, Wp, Ho, Wo)
    return _COL_CACHE[key]


def conv2d(x: Tensor, w: Tensor, b=None, stride=(1, 1), pad=(1, 1)) -> Tensor:
    """x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout,) or None."""
    Cin, H, W = x.data.shape
    Cout, Cw, kh, kw = w.data.shape
    if Cw != Cin:
        raise ShapeError(f"conv2d channel mismatch: input {Cin}, weight {Cw}")
    sh, sw = stride
    ph, pw = pad
    idx, Hp, Wp, Ho, Wo = _im2col_indices(Cin, H, W, kh, kw, sh, sw, ph, pw)
    xp = np.zeros((Cin, Hp, Wp), dtype=x.data.dtype)
    xp[:, ph:ph + H, pw:pw + W] = x.data
    cols = xp.reshape(-1)[idx]                                # (Cin*kh*kw, Ho*Wo)
    out = w.data.reshape(Cout, -1) @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(Cout, Ho, Wo)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gm = g.reshape(Cout, -1)
        if b is not None and b.requires_grad:
            accumulate(b, gm.sum(axis=1))
        if w.requires_grad:
            accumulate(w, (gm @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            dcols = w.data.reshape(Cout, -1).T @ gm           # (Cin*kh*kw, Ho*Wo)
            flat = np.bincount(idx.reshape(-1), weights=dcols.reshape(-1).astype(np.float64),
                               minlength=Cin * Hp * Wp)
            dxp = flat.reshape(Cin, Hp, Wp).astype(x.data.dtype)
            accumulate(x, dxp[:, ph:ph + H, pw:pw + W])

    return make_node(out, parents, bwd, "conv2d")


def conv1d(x: Tensor, w: Tensor, b=None, stride=1, pad=1) -> Tensor:
    """x: (Cin,T), w: (Cout,Cin,K), b: (Cout,) or None; padded with zeros."""
    Cin, T = x.data.shape
    Cout, Cw, K = w.data.shape
    if Cw != Cin:
        raise ShapeError(f"conv1d channel mismatch: input {Cin}, weight {Cw}")
    x2 = reshape(x, (Cin, 1, T))
    w2 = reshape(w, (Cout, Cin, 1, K))
    out = conv2d(x2, w2, b, stride=(1, stride), pad=(0, pad))
    return reshape(out, (Cout, out.data.shape[2]))


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling of (C,H,W)."""
    C, H, W = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        accumulate(x, g.reshape(C, H, 2, W, 2).sum(axis=(2, 4)))

    return make_node(out, (x,), bwd, "upsample2x")


# -- bilinear plane sampling ---------------------------------------------------

def bilinear_sample(plane: Tensor, coords) -> Tensor:
    """Sample (P,Q,C) feature plane at (N,2) texel coordinates.

    Texel (0,0) is the first texel center; coordinates are border-clamped to
    [0,P-1]x[0,Q-1]. Differentiable w.r.t. the plane and, when coords is a
    requires_grad Tensor, w.r.t. the coordinates (piecewise linear).
    """
    coords_t = coords if isinstance(coords, Tensor) else Tensor(coords, dtype=plane.data.dtype)
    P, Q, C = plane.data.shape
    cu = np.clip(coords_t.data[:, 0], 0.0, P - 1.0)
    cv = np.clip(coords_t.data[:, 1], 0.0, Q - 1.0)
    i0 = np.minimum(np.floor(cu).astype(np.int64), max(P - 2, 0))
    j0 = np.minimum(np.floor(cv).astype(np.int64), max(Q - 2, 0))
    fu = (cu - i0).astype(plane.data.dtype)[:, None]
    fv = (cv - j0).astype(plane.data.dtype)[:, None]
    i1 = np.minimum(i0 + 1, P - 1)
    j1 = np.minimum(j0 + 1, Q - 1)
    flat = plane.data.reshape(P * Q, C)
    n00 = i0 * Q + j0
    n10 = i1 * Q + j0
    n01 = i0 * Q + j1
    n11 = i1 * Q + j1
    f00 = flat[n00]
    f10 = flat[n10]
    f01 = flat[n01]
    f11 = flat[n11]
    w00 = (1 - fu) * (1 - fv)
    w10 = fu * (1 - fv)
    w01 = (1 - fu) * fv
    w11 = fu * fv
    out = w00 * f00 + w10 * f10 + w01 * f01 + w11 * f11

    def bwd(g):
        if plane.requires_grad:
            idx = np.concatenate([n00, n10, n01, n11])
            wall = np.concatenate([w00, w10, w01, w11]) * np.concatenate([g] * 4)
            # one flat cell-channel scatter; bincount sums in f64 sequentially
            idx2 = idx[:, None] * C + np.arange(C)[None, :]
            gp = np.bincount(idx2.ravel(), weights=wall.ravel().astype(np.float64),
                             minlength=P * Q * C)
            accumulate(plane, gp.reshape(P, Q, C).astype(plane.data.dtype))
        if coords_t.requires_grad:
            du = ((f10 - f00) * (1 - fv) + (f11 - f01) * fv)
            dv = ((f01 - f00) * (1 - fu) + (f11 - f10) * fu)
            gu = (g * du).sum(axis=1)
            gv = (g * dv).sum(axis=1)
            # clamp kills the gradient outside the border
            gu = np.where((coords_t.data[:, 0] < 0) | (coords_t.data[:, 0] > P - 1), 0.0, gu)
            gv = np.where((coords_t.data[:, 1] < 0) | (coords_t.data[:, 1] > Q - 1), 0.0, gv)
            accumulate(coords_t, np.stack([gu, gv], axis=1))

    return make_node(out, (plane, coords_t), bwd, "bilinear_sample")


# -- backward ------------------------------------------------------------------

def _toposort(root: Tensor):
    order, stack, state = [], [root], {}
    while stack:
        node = stack[-1]
        st = state.get(id(node), 0)
        if st == 0:
            state[id(node)] = 1
            for p in node._parents:
                if state.get(id(p), 0) == 0 and p.requires_grad:
                    stack.append(p)
        else:
            stack.pop()
            if st == 1:
                state[id(node)] = 2
                order.append(node)
    return order


def backward(loss: Tensor):
    """Populate .grad with d(loss)/d(tensor) on every participating tensor.

    Tensors with requires_grad that do not participate keep grad=None, which
    grads_of reads as zero. Raises UnsupportedOpError for an interior node
    that carries no backward rule.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            if node._parents:
                raise UnsupportedOpError(f"op '{node.op}' has no backward rule")
            continue
        node._backward(node.grad)


def grads_of(params) -> list:
    """Gradient per parameter; zeros for parameters the loss never touched."""
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(params):
    for p in params:
        p.grad = None


@contextlib.contextmanager
def frozen(params):
    """Temporarily clear requires_grad so backward skips these parameters."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, saved):
            p.requires_grad = r
