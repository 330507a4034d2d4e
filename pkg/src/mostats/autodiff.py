"""Reverse-mode differentiation over dense numpy arrays.

Design rules that the rest of the library depends on:

* Arrays are row-major and C-contiguous; reshapes of op outputs are views.
* dtype is a runtime property, one of f32/f64. Binary ops never promote
  silently; mixing dtypes is a contract error and :func:`cast` is explicit.
* Every public op validates that its output is finite and raises
  :class:`NumericError` otherwise. NaN/Inf never propagate silently.
* Op outputs are frozen (read-only); graph values are immutable once
  published.
* Reductions run in numpy's fixed native order, so identical inputs produce
  bit-identical outputs run to run (with a fixed BLAS thread count).
* ``backward`` walks the graph in topological order and visits each node
  exactly once; leaf gradients always shape-match their values.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError

DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

# Backward of sqrt clamps its denominator here so that a zero gradient
# flowing into sqrt(0) stays zero instead of becoming 0 * inf = NaN.
_SQRT_GRAD_FLOOR = 1e-12


def dtype_name(dt) -> str:
    dt = np.dtype(dt)
    for name, cand in DTYPES.items():
        if cand == dt:
            return name
    raise ContractError(f"unsupported dtype {dt}; expected f32 or f64")


def _check_finite(value: np.ndarray, what: str = "tensor"):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {what}")


class Node:
    """One value in the differentiation graph.

    ``grad`` is lazily allocated during backward; ``parents`` plus the
    attached backward rule define how gradient flows. Nodes built from
    constant inputs carry no parents, so inference-only forwards skip all
    bookkeeping.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        v = np.asarray(value)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        if not v.flags.c_contiguous:
            v = np.ascontiguousarray(v)
        _check_finite(v)
        self.value = v
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self) -> str:
        return dtype_name(self.value.dtype)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, dtype=None, requires_grad=True) -> Node:
    """Graph leaf wrapping ``value`` (not copied; replace, don't mutate)."""
    v = np.asarray(value)
    if dtype is not None:
        v = v.astype(DTYPES[dtype], copy=False)
    elif v.dtype not in (np.float32, np.float64):
        v = v.astype(np.float64)
    return Node(v, requires_grad=requires_grad)


def constant(value, dtype=None) -> Node:
    return leaf(value, dtype=dtype, requires_grad=False)


def _as_node(x, like: Node) -> Node:
    if isinstance(x, Node):
        return x
    return constant(np.asarray(x, dtype=like.value.dtype))


def _result(value: np.ndarray, parents, backward) -> Node:
    """Wrap an op output; prunes the graph when no parent needs gradient."""
    if any(p.requires_grad for p in parents):
        node = Node(value, parents, backward, requires_grad=True)
    else:
        node = Node(value, (), None, requires_grad=False)
    if node.value is value:  # freshly computed array: freeze it
        node.value.setflags(write=False)
    return node


def _accumulate(node: Node, g: np.ndarray):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def backward(loss: Node) -> None:
    """Populate ``grad`` on every reachable leaf of a scalar loss."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any differentiable leaf")

    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b):
    if isinstance(a, Node) and isinstance(b, Node):
        if a.value.dtype != b.value.dtype:
            raise ContractError(
                f"dtype mismatch: {dtype_name(a.value.dtype)} vs {dtype_name(b.value.dtype)}; use cast()")
        return a, b
    if isinstance(a, Node):
        return a, _as_node(b, a)
    if isinstance(b, Node):
        return _as_node(a, b), b
    a = constant(a)
    return a, _as_node(b, a)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Node:
    a, b = _binary(a, b)
    with np.errstate(all="ignore"):
        out = a.value + b.value
    _check_finite(out, "add output")

    def back(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return _result(out, (a, b), back)


def sub(a, b) -> Node:
    a, b = _binary(a, b)
    with np.errstate(all="ignore"):
        out = a.value - b.value
    _check_finite(out, "sub output")

    def back(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _result(out, (a, b), back)


def mul(a, b) -> Node:
    a, b = _binary(a, b)
    with np.errstate(all="ignore"):
        out = a.value * b.value
    _check_finite(out, "mul output")

    def back(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _result(out, (a, b), back)


def div(a, b) -> Node:
    a, b = _binary(a, b)
    with np.errstate(all="ignore"):
        out = a.value / b.value
    _check_finite(out, "div output")

    def back(g):
        _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _result(out, (a, b), back)


def neg(a: Node) -> Node:
    def back(g):
        _accumulate(a, -g)

    return _result(-a.value, (a,), back)


def exp(a: Node) -> Node:
    with np.errstate(all="ignore"):
        out = np.exp(a.value)
    _check_finite(out, "exp output")

    def back(g):
        _accumulate(a, g * out)

    return _result(out, (a,), back)


def log(a: Node) -> Node:
    with np.errstate(all="ignore"):
        out = np.log(a.value)
    _check_finite(out, "log output (argument must be positive)")

    def back(g):
        _accumulate(a, g / a.value)

    return _result(out, (a,), back)


def sqrt(a: Node) -> Node:
    with np.errstate(all="ignore"):
        out = np.sqrt(a.value)
    _check_finite(out, "sqrt output (argument must be nonnegative)")

    def back(g):
        _accumulate(a, g * (0.5 / np.maximum(out, _SQRT_GRAD_FLOOR)))

    return _result(out, (a,), back)


def power(a: Node, p: float) -> Node:
    p = float(p)
    with np.errstate(all="ignore"):
        out = a.value ** p
    _check_finite(out, "power output")

    def back(g):
        with np.errstate(all="ignore"):
            d = p * a.value ** (p - 1.0)
        _accumulate(a, g * d)

    return _result(out, (a,), back)


def relu(a: Node) -> Node:
    out = np.maximum(a.value, 0)

    def back(g):
        _accumulate(a, g * (a.value > 0))

    return _result(out, (a,), back)


def cast(a: Node, dtype: str) -> Node:
    target = DTYPES[dtype]
    if a.value.dtype == target:
        return a
    out = a.value.astype(target)

    def back(g):
        _accumulate(a, g.astype(a.value.dtype))

    return _result(out, (a,), back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Node, shape) -> Node:
    out = a.value.reshape(shape)  # view: contiguous row-major input

    def back(g):
        _accumulate(a, g.reshape(a.value.shape))

    return _result(out, (a,), back)


def transpose(a: Node, axes=None) -> Node:
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.value.transpose(axes))

    def back(g):
        _accumulate(a, np.ascontiguousarray(g.transpose(inv)))

    return _result(out, (a,), back)


def swap_last2(a: Node) -> Node:
    axes = list(range(a.value.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(nodes, axis: int = 0) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ContractError("concat of zero tensors")
    dt = nodes[0].value.dtype
    for n in nodes:
        if n.value.dtype != dt:
            raise ContractError("concat dtype mismatch; use cast()")
    out = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(n, np.ascontiguousarray(g[tuple(idx)]))

    return _result(out, tuple(nodes), back)


def diagonal(a: Node) -> Node:
    """Main diagonal of a square 2-D node."""
    if a.value.ndim != 2 or a.value.shape[0] != a.value.shape[1]:
        raise DimensionError(f"diagonal expects a square matrix, got {a.value.shape}")
    out = np.ascontiguousarray(np.diagonal(a.value))

    def back(g):
        gg = np.zeros_like(a.value)
        np.fill_diagonal(gg, g)
        _accumulate(a, gg)

    return _result(out, (a,), back)


def select_labels(a: Node, labels) -> Node:
    """Pick a[i, labels[i]] for each row; backward scatters into the picks."""
    labels = np.asarray(labels)
    if a.value.ndim != 2:
        raise DimensionError("select_labels expects a 2-D input")
    n, k = a.value.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range [0,{k})")
    rows = np.arange(n)
    out = np.ascontiguousarray(a.value[rows, labels])

    def back(g):
        gg = np.zeros_like(a.value)
        np.add.at(gg, (rows, labels), g)
        _accumulate(a, gg)

    return _result(out, (a,), back)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    with np.errstate(all="ignore"):
        out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).astype(a.value.dtype, copy=True))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.value.shape).copy())

    return _result(np.asarray(out), (a,), back)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[ax] for ax in axes]))
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, constant(np.asarray(1.0 / count, dtype=a.value.dtype)))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Node:
    """Matrix product. Supports 2Dx2D, batched 3Dx3D and 3Dx2D operands."""
    a, b = _binary(a, b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise DimensionError(f"matmul inner extents differ: {av.shape} @ {bv.shape}")
        with np.errstate(all="ignore"):
            out = av @ bv

        def back(g):
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)

    elif av.ndim == 3 and bv.ndim == 3:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise DimensionError(f"batched matmul shapes differ: {av.shape} @ {bv.shape}")
        with np.errstate(all="ignore"):
            out = av @ bv

        def back(g):
            _accumulate(a, g @ bv.swapaxes(-1, -2))
            _accumulate(b, av.swapaxes(-1, -2) @ g)

    elif av.ndim == 3 and bv.ndim == 2:
        if av.shape[2] != bv.shape[0]:
            raise DimensionError(f"matmul inner extents differ: {av.shape} @ {bv.shape}")
        with np.errstate(all="ignore"):
            out = av @ bv

        def back(g):
            _accumulate(a, g @ bv.T)
            _accumulate(b, np.tensordot(av, g, axes=([0, 1], [0, 1])))

    else:
        raise DimensionError(f"unsupported matmul ranks: {av.ndim} and {bv.ndim}")
    return _result(out, (a, b), back)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _conv_geometry(h, w, kh, kw, stride, padding):
    if stride < 1 or padding < 0:
        raise ContractError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def conv2d(x, k, stride: int = 1, padding: int = 1) -> Node:
    """Cross-correlation (no kernel flip), the deep-learning convention.

    ``x`` is (C,H,W) or batched (B,C,H,W); ``k`` is (F,C,kh,kw). Implemented
    as im2col + one flat GEMM; the backward scatters through the same
    geometry, so forward and backward share one fixed summation order.
    """
    x, k = _binary(x, k)
    squeeze = x.value.ndim == 3
    xv = x.value[None] if squeeze else x.value
    kv = k.value
    if xv.ndim != 4 or kv.ndim != 4:
        raise DimensionError(f"conv2d expects (B,C,H,W) and (F,C,kh,kw), got {x.value.shape}, {kv.shape}")
    bsz, cin, h, w = xv.shape
    f, ck, kh, kw = kv.shape
    if ck != cin:
        raise DimensionError(f"kernel channels {ck} != input channels {cin}")
    ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)

    if padding:
        xp = np.zeros((bsz, cin, h + 2 * padding, w + 2 * padding), dtype=xv.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xv
    else:
        xp = xv

    # cols[b, i, j, c, dy, dx] = patch values; flattened to one GEMM operand
    cols = np.empty((bsz, ho, wo, cin, kh, kw), dtype=xv.dtype)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, :, :, dy, dx] = xp[:, :, dy:dy + ho * stride:stride,
                                          dx:dx + wo * stride:stride].transpose(0, 2, 3, 1)
    flat = cols.reshape(bsz * ho * wo, cin * kh * kw)
    kmat = kv.reshape(f, cin * kh * kw)
    with np.errstate(all="ignore"):
        out = (flat @ kmat.T).reshape(bsz, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def back(g):
        gv = g[None] if squeeze else g
        gflat = np.ascontiguousarray(gv.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, f)
        if k.requires_grad:
            _accumulate(k, (gflat.T @ flat).reshape(f, cin, kh, kw))
        if x.requires_grad:
            dcols = (gflat @ kmat).reshape(bsz, ho, wo, cin, kh, kw)
            dxp = np.zeros_like(xp)
            for dy in range(kh):
                for dx in range(kw):
                    dxp[:, :, dy:dy + ho * stride:stride, dx:dx + wo * stride:stride] += \
                        dcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
            dx_ = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            _accumulate(x, dx_[0] if squeeze else dx_)

    return _result(out, (x, k), back)


def maxpool2(x) -> Node:
    """2x2 max pooling with stride 2; ties go to the first element in
    row-major window order. Odd trailing rows/columns are dropped."""
    if not isinstance(x, Node):
        x = constant(x)
    squeeze = x.value.ndim == 3
    xv = x.value[None] if squeeze else x.value
    if xv.ndim != 4:
        raise DimensionError(f"maxpool2 expects (C,H,W) or (B,C,H,W), got {x.value.shape}")
    bsz, c, h, w = xv.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2 needs H,W >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = xv[:, :, :ho * 2, :wo * 2].reshape(bsz, c, ho, 2, wo, 2)
    win = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 3, 5)).reshape(bsz, c, ho, wo, 4)
    arg = win.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def back(g):
        gv = g[None] if squeeze else g
        dwin = np.zeros((bsz, c, ho, wo, 4), dtype=xv.dtype)
        np.put_along_axis(dwin, arg[..., None], gv[..., None], axis=-1)
        dwin = dwin.reshape(bsz, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(xv)
        dx[:, :, :ho * 2, :wo * 2] = dwin.reshape(bsz, c, ho * 2, wo * 2)
        _accumulate(x, dx[0] if squeeze else dx)

    return _result(out, (x,), back)


# ---------------------------------------------------------------------------
# composites used across the pipeline
# ---------------------------------------------------------------------------

def softmax(z: Node, axis: int = -1) -> Node:
    """Numerically stable softmax (max subtraction; the shift is detached,
    which is exact because softmax is shift-invariant)."""
    m = constant(z.value.max(axis=axis, keepdims=True))
    e = exp(sub(z, m))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(z: Node, axis: int = -1) -> Node:
    m = constant(z.value.max(axis=axis, keepdims=True))
    shifted = sub(z, m)
    return sub(shifted, log(sum_(exp(shifted), axis=axis, keepdims=True)))


def l2_normalize(v: Node, axis: int = -1) -> Node:
    """Rows scaled to unit L2 norm. Zero rows surface a numeric error."""
    norms = np.sqrt((v.value ** 2).sum(axis=axis))
    if np.any(norms == 0.0):
        raise NumericError("l2_normalize: zero-norm row; cannot produce a unit vector")
    return div(v, sqrt(sum_(mul(v, v), axis=axis, keepdims=True)))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_diff_check(f, x, h: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``f`` maps a Node to a scalar Node and must be a pure function of its
    input. Returns max over coordinates of
    ``|analytic - central| / max(1, |central|)``. f64 only.
    """
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise ContractError("finite_diff_check requires f64 input")
    node = leaf(x.copy(), requires_grad=True)
    out = f(node)
    if not isinstance(out, Node) or out.value.size != 1:
        raise ContractError("f must return a scalar Node")
    backward(out)
    analytic = np.zeros_like(x) if node.grad is None else node.grad

    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp = float(f(constant(xp.reshape(x.shape))).value)
        fm = float(f(constant(xm.reshape(x.shape))).value)
        central = (fp - fm) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - central) / max(1.0, abs(central))
        worst = max(worst, err)
    return worst
