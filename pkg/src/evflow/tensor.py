"""Dense tensors with reverse-mode automatic differentiation.

Deliberately small: only the operations the flow network needs (2-D matmul,
conv2d, bilinear sampling, row softmax, and a pointwise family). There is no
general broadcasting engine and no views; every op returns a fresh tensor.
Forward passes are deterministic, and gradients of every differentiable op
are checked against central finite differences in the test suite.

Coordinate convention, used everywhere in this package: an integer
coordinate addresses the center of a pixel, coords channel 0 is x (column)
and channel 1 is y (row).
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphConsumedError(RuntimeError):
    """backward() was called twice on the same recorded graph."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _Node:
    """Backward record: parent tensors plus a closure producing their grads."""

    __slots__ = ("parents", "backward_fn", "released")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """N-d array plus optional gradient tracking.

    Data is float64 by default (the test suite pins double precision);
    float32 is accepted for training speed. Tensors are immutable by
    convention: ops return new tensors and never write into inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    # -- basics ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Leaf tensor sharing this tensor's data, cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=False)

    # -- arithmetic (same-shape elementwise, plus python scalars) ---------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "add")
            return _from_op(
                self.data + other.data,
                (self, other),
                lambda g: (g, g),
            )
        c = self.dtype.type(other)
        return _from_op(self.data + c, (self,), lambda g: (g,))

    __radd__ = __add__

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "sub")
            return _from_op(
                self.data - other.data,
                (self, other),
                lambda g: (g, -g),
            )
        c = self.dtype.type(other)
        return _from_op(self.data - c, (self,), lambda g: (g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "mul")
            a, b = self.data, other.data
            return _from_op(a * b, (self, other), lambda g: (g * b, g * a))
        c = self.dtype.type(other)
        return _from_op(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    # -- pointwise nonlinearities -----------------------------------------

    def relu(self):
        mask = self.data > 0
        return _from_op(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def tanh(self):
        out = np.tanh(self.data)
        return _from_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        d = self.data
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        e = np.exp(d[~pos])
        out[~pos] = e / (1.0 + e)
        return _from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def abs(self):
        sgn = np.sign(self.data)
        return _from_op(np.abs(self.data), (self,), lambda g: (g * sgn,))

    # -- reductions and reshapes ------------------------------------------

    def sum(self):
        src_shape = self.data.shape
        return _from_op(
            np.asarray(self.data.sum(), dtype=self.dtype),
            (self,),
            lambda g: (np.full(src_shape, g, dtype=g.dtype),),
        )

    def mean(self):
        n = self.data.size
        src_shape = self.data.shape
        return _from_op(
            np.asarray(self.data.mean(), dtype=self.dtype),
            (self,),
            lambda g: (np.full(src_shape, g / n, dtype=g.dtype),),
        )

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape
        return _from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(src_shape),)
        )

    def transpose(self):
        if self.data.ndim != 2:
            raise DimensionError("transpose expects a 2-d tensor")
        return _from_op(
            np.ascontiguousarray(self.data.T), (self,),
            lambda g: (np.ascontiguousarray(g.T),),
        )

    # -- graph -------------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar; fills .grad on reachable leaves.

        The recorded graph is single-use: a second call without re-running
        the forward pass raises GraphConsumedError.
        """
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar tensor")
        if self._node is not None and self._node.released:
            raise GraphConsumedError(
                "graph already consumed by a previous backward(); re-run forward"
            )

        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            node = t._node
            if node is None or t.grad is None:
                continue
            grads = node.backward_fn(t.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if g is t.grad else g
                else:
                    parent.grad = parent.grad + g
            node.backward_fn = None
            node.parents = ()
            node.released = True
            if t is not self:
                t.grad = None  # intermediates are not kept


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} differ"
        )


def _from_op(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), backward_fn)
    return out


def _toposort(root):
    """Deterministic post-order over the recorded graph (iterative)."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in reversed(t._node.parents):
                if id(p) not in seen and p._node is not None:
                    stack.append((p, False))
                elif id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    topo.append(p)
    return topo


# ---------------------------------------------------------------------------
# multi-input ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product c[i,j] = sum_l a[i,l] * b[l,j]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-d tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dims {a.data.shape} x {b.data.shape} do not match"
        )
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _from_op(ad @ bd, (a, b), backward)


def concat_channels(tensors) -> Tensor:
    """Concatenate along axis 0 (the channel axis of C,H,W maps)."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    tail = tensors[0].data.shape[1:]
    for t in tensors[1:]:
        if t.data.shape[1:] != tail:
            raise DimensionError(
                f"concat_channels: non-channel dims differ ({t.data.shape[1:]} vs {tail})"
            )
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _from_op(np.concatenate([t.data for t in tensors], axis=0), tensors, backward)


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    """Channel slice [start:stop) along axis 0 (returns a copy)."""
    if not (0 <= start < stop <= t.data.shape[0]):
        raise DimensionError(f"slice_channels: [{start},{stop}) out of range")
    src_shape = t.data.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _from_op(t.data[start:stop].copy(), (t,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilized by max subtraction."""
    if x.data.ndim != 2:
        raise DimensionError("softmax_rows expects a 2-d tensor")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (x,), backward)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of a C_in,H,W map with C_out,C_in,k,k kernels.

    Zero padding; output H' = (H + 2*padding - k) // stride + 1.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError("conv2d expects x:(C,H,W) and w:(O,C,k,k)")
    c_in, h, wd = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv2d: input channels {c_in} != kernel channels {c_in_w}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError("conv2d: kernel must be square with odd size")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError("conv2d: kernel larger than padded input")
    if bias is not None and bias.data.shape != (c_out,):
        raise DimensionError("conv2d: bias shape must be (C_out,)")

    if padding:
        xp = np.zeros((c_in, hp, wp), dtype=x.dtype)
        xp[:, padding:padding + h, padding:padding + wd] = x.data
    else:
        xp = x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, ho * wo)
    wf = w.data.reshape(c_out, -1)
    out = wf @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(c_out, ho, wo)

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gf = g.reshape(c_out, -1)
        dw = (gf @ cols.T).reshape(w.data.shape)
        dcols = wf.T @ gf
        dwin = dcols.reshape(c_in, kh, kw, ho, wo)
        dxp = np.zeros((c_in, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += dwin[:, i, j]
        dx = dxp[:, padding:padding + h, padding:padding + wd]
        if bias is None:
            return dx, dw
        return dx, dw, gf.sum(axis=1)

    return _from_op(out, parents, backward)


def bilinear_sample(src: Tensor, coords: Tensor) -> Tensor:
    """Sample src (C,H,W) at continuous positions coords (2,H',W').

    coords[0] is x, coords[1] is y, in pixel units with integer coordinates
    at pixel centers. 4-neighbor bilinear interpolation; any coordinate
    outside [0,W-1] x [0,H-1] yields 0 in all channels.
    """
    if src.data.ndim != 3:
        raise DimensionError("bilinear_sample expects src:(C,H,W)")
    if coords.data.ndim != 3 or coords.data.shape[0] != 2:
        raise DimensionError("bilinear_sample expects coords:(2,H',W')")
    c, h, w = src.data.shape
    xs, ys = coords.data[0], coords.data[1]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    v00 = src.data[:, y0, x0]
    v01 = src.data[:, y0, x1]
    v10 = src.data[:, y1, x0]
    v11 = src.data[:, y1, x1]
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    out = (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11) * inside

    def backward(g):
        gm = g * inside
        dsrc = None
        if src.requires_grad:
            dsrc = np.zeros_like(src.data)
            ch = np.arange(c)[:, None, None]
            np.add.at(dsrc, (ch, y0[None], x0[None]), gm * w00)
            np.add.at(dsrc, (ch, y0[None], x1[None]), gm * w01)
            np.add.at(dsrc, (ch, y1[None], x0[None]), gm * w10)
            np.add.at(dsrc, (ch, y1[None], x1[None]), gm * w11)
        dcoords = None
        if coords.requires_grad:
            ddx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) * gm
            ddy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) * gm
            dcoords = np.stack([ddx.sum(axis=0), ddy.sum(axis=0)])
        return dsrc, dcoords

    return _from_op(out, (src, coords), backward)


def l1(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference, as a scalar tensor."""
    _check_same_shape(a, b, "l1")
    return (a - b).abs().mean()


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(fn, inputs, h=1e-4, projection_seed=0):
    """Max relative error between analytic and central-difference gradients.

    fn maps the given tensors to a tensor of any shape; the output is
    reduced to a scalar through a fixed random projection so a single
    backward pass covers every output coordinate. The error for each input
    coordinate is |analytic - numeric| / max(1, |analytic|); the max over
    all grad-tracked coordinates is returned. Double precision only.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("finite_diff_check requires float64 inputs")

    probe = fn(*inputs)
    rng = np.random.default_rng(projection_seed)
    proj = rng.standard_normal(probe.data.shape)

    def scalar_value(raw_arrays):
        ts = [Tensor(a) for a in raw_arrays]
        with no_grad():
            out = fn(*ts)
        return float(np.sum(out.data * proj))

    loss = (fn(*inputs) * Tensor(proj)).sum()
    loss.backward()

    worst = 0.0
    base = [t.data.copy() for t in inputs]
    for idx, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = base[idx].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = scalar_value(base)
            flat[k] = orig - h
            f_minus = scalar_value(base)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    for t in inputs:
        t.grad = None
    return worst
