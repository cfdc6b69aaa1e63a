"""Reverse-mode automatic differentiation over dense numpy arrays.

A small computation-graph engine: every operation returns a new
:class:`Tensor` holding the forward value plus a closure that routes the
incoming gradient to the operation's parents.  `backward` accumulates
gradients in reverse topological order.

Arrays are 64-bit when verifying gradients and 32-bit during training;
the dtype of a graph follows the dtype of its leaves.  Tensors are never
mutated after creation (optimizers replace `.data` in place on leaf
parameters only, between graph builds).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "backward",
    "gradients",
    "grad_check",
    "GradCheckReport",
    "conv2d",
    "conv_transpose2d",
    "maxpool2x2",
    "take_column",
    "drop_column",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (forward only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node of the computation graph: value, gradient slot, parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- graph plumbing ------------------------------------------------

    @classmethod
    def _node(cls, data, parents, backward_fn):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _wrap(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._node(a.data + b.data, (a, b), backward_fn)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward_fn(g):
            a._accumulate(-g)

        return Tensor._node(-a.data, (a,), backward_fn)

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._node(a.data * b.data, (a, b), backward_fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._node(a.data / b.data, (a, b), backward_fn)

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeError("pow: only scalar exponents are supported")
        a = self
        out_data = a.data ** exponent

        def backward_fn(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1))

        return Tensor._node(out_data, (a,), backward_fn)

    def __matmul__(self, other):
        other = self._wrap(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(f"matmul: expected 2D operands, got {a.data.shape} @ {b.data.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")

        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._node(a.data @ b.data, (a, b), backward_fn)

    # -- elementwise functions ------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward_fn(g):
            a._accumulate(g * out_data)

        return Tensor._node(out_data, (a,), backward_fn)

    def log(self):
        a = self

        def backward_fn(g):
            a._accumulate(g / a.data)

        return Tensor._node(np.log(a.data), (a,), backward_fn)

    def relu(self):
        a = self
        out_data = np.maximum(a.data, 0)

        def backward_fn(g):
            a._accumulate(g * (a.data > 0))

        return Tensor._node(out_data, (a,), backward_fn)

    def sigmoid(self):
        a = self
        out_data = _special.expit(a.data)

        def backward_fn(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (a,), backward_fn)

    def softplus(self):
        # log(1 + exp(x)) in overflow-free form; derivative is sigmoid(x)
        a = self
        out_data = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))

        def backward_fn(g):
            a._accumulate(g * _special.expit(a.data))

        return Tensor._node(out_data, (a,), backward_fn)

    def log_gamma(self):
        a = self
        out_data = _special.gammaln(a.data).astype(a.data.dtype)

        def backward_fn(g):
            a._accumulate(g * _special.psi(a.data).astype(a.data.dtype))

        return Tensor._node(out_data, (a,), backward_fn)

    def digamma(self):
        a = self
        out_data = _special.psi(a.data).astype(a.data.dtype)

        def backward_fn(g):
            a._accumulate(g * _special.polygamma(1, a.data).astype(a.data.dtype))

        return Tensor._node(out_data, (a,), backward_fn)

    def clamp_max(self, bound):
        """min(x, bound); the gradient passes only where x <= bound."""
        a = self
        out_data = np.minimum(a.data, bound)

        def backward_fn(g):
            a._accumulate(g * (a.data <= bound))

        return Tensor._node(out_data, (a,), backward_fn)

    # -- shape and reduction ---------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def backward_fn(g):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._node(out_data, (a,), backward_fn)

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward_fn(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else np.full_like(a.data, g))
            else:
                g_exp = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g_exp, a.data.shape).copy())

        return Tensor._node(out_data, (a,), backward_fn)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def detach(self):
        """A view of the value that stops gradient flow."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def item(self):
        return float(self.data)


# -- row-wise column selection -------------------------------------------


def take_column(x, idx):
    """Pick one column per row: out[i] = x[i, idx[i]]."""
    idx = np.asarray(idx)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ShapeError(f"take_column: need (N,K) and (N,) index, got {x.data.shape} and {idx.shape}")
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, idx]

    def backward_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, idx), g)
        x._accumulate(full)

    return Tensor._node(out_data, (x,), backward_fn)


def drop_column(x, idx):
    """Remove one column per row: out[i] = x[i, all j != idx[i]], shape (N, K-1)."""
    idx = np.asarray(idx)
    n, k = x.data.shape
    if k < 2:
        raise ShapeError("drop_column: need at least two columns")
    if idx.shape != (n,):
        raise ShapeError(f"drop_column: need (N,) index, got {idx.shape} for {x.data.shape}")
    keep = np.ones((n, k), dtype=bool)
    keep[np.arange(n), idx] = False
    out_data = x.data[keep].reshape(n, k - 1)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[keep] = g.ravel()
        x._accumulate(full)

    return Tensor._node(out_data, (x,), backward_fn)


# -- convolution / pooling -------------------------------------------------


def _im2col(x, kh, kw, stride):
    """Extract conv patches of (N,H,W,C) as (N, oh, ow, kh*kw*C)."""
    n, h, w, c = x.shape
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]           # (N, oh, ow, C, kh, kw)
    oh, ow = windows.shape[1], windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n, oh, ow, kh * kw * c)


def _col2im(cols, out_shape, kh, kw, stride):
    """Scatter-add (N, h, w, kh*kw*C) patches back into (N,H,W,C)."""
    n, h, w, _ = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    c = out_shape[3]
    patches = cols.reshape(n, h, w, kh, kw, c)
    for a in range(kh):
        for b in range(kw):
            out[:, a : a + stride * (h - 1) + 1 : stride,
                b : b + stride * (w - 1) + 1 : stride, :] += patches[:, :, :, a, b, :]
    return out


def conv2d(x, w, stride=1):
    """Valid-padding 2D convolution.

    x: (N, H, W, Cin), w: (kh, kw, Cin, Cout) -> (N, oh, ow, Cout) with
    oh = (H - kh)//stride + 1.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need (N,H,W,C) input and (kh,kw,Cin,Cout) kernel, got {x.data.shape}, {w.data.shape}")
    n, h, wd, cin = x.data.shape
    kh, kw, wcin, cout = w.data.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: channel mismatch, input {x.data.shape} vs kernel {w.data.shape}")
    if h < kh or wd < kw:
        raise ShapeError(f"conv2d: input {x.data.shape} smaller than kernel {w.data.shape}")
    cols = _im2col(x.data, kh, kw, stride)
    oh, ow = cols.shape[1], cols.shape[2]
    wmat = w.data.reshape(kh * kw * cin, cout)
    out_data = (cols.reshape(-1, kh * kw * cin) @ wmat).reshape(n, oh, ow, cout)

    def backward_fn(g):
        gflat = g.reshape(-1, cout)
        if w.requires_grad:
            dw = cols.reshape(-1, kh * kw * cin).T @ gflat
            w._accumulate(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(n, oh, ow, kh * kw * cin)
            x._accumulate(_col2im(dcols, x.data.shape, kh, kw, stride))

    return Tensor._node(out_data, (x, w), backward_fn)


def conv_transpose2d(x, w, stride=1):
    """Transposed (fractionally strided) convolution.

    x: (N, h, w, Cin), w: (kh, kw, Cout, Cin) -> (N, H, W, Cout) with
    H = (h - 1) * stride + kh.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d: need 4D input and kernel, got {x.data.shape}, {w.data.shape}")
    n, h, wd, cin = x.data.shape
    kh, kw, cout, wcin = w.data.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d: channel mismatch, input {x.data.shape} vs kernel {w.data.shape}")
    out_h = (h - 1) * stride + kh
    out_w = (wd - 1) * stride + kw
    wmat = w.data.reshape(kh * kw * cout, cin)
    cols = (x.data.reshape(-1, cin) @ wmat.T).reshape(n, h, wd, kh * kw * cout)
    out_data = _col2im(cols, (n, out_h, out_w, cout), kh, kw, stride)

    def backward_fn(g):
        gcols = _im2col(g, kh, kw, stride)          # (N, h, w, kh*kw*Cout)
        gflat = gcols.reshape(-1, kh * kw * cout)
        if x.requires_grad:
            x._accumulate((gflat @ wmat).reshape(x.data.shape))
        if w.requires_grad:
            dw = gflat.T @ x.data.reshape(-1, cin)
            w._accumulate(dw.reshape(w.data.shape))

    return Tensor._node(out_data, (x, w), backward_fn)


def maxpool2x2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2x2: need (N,H,W,C), got {x.data.shape}")
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {x.data.shape}")
    oh, ow = h // 2, w // 2
    windows = x.data.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, 4)
    arg = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        x._accumulate(dx)

    return Tensor._node(out_data, (x,), backward_fn)


# -- backward pass ----------------------------------------------------------


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(node) to every reachable tensor's `.grad`."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None:
            node._backward(node.grad)


def gradients(loss, params):
    """Gradient map for `params` (name -> array); zeros for unreachable ones."""
    for p in params.values():
        p.grad = None
    backward(loss)
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error of analytic vs numeric gradients."""

    per_param: dict

    @property
    def max_rel_error(self):
        return max(self.per_param.values()) if self.per_param else 0.0

    def __str__(self):
        lines = [f"  {name}: {err:.3e}" for name, err in sorted(self.per_param.items())]
        return "gradient check (max rel. error {:.3e})\n{}".format(self.max_rel_error, "\n".join(lines))


def grad_check(fn, params, step=1e-5, max_entries=16, seed=0):
    """Compare analytic gradients of `fn()` against central finite differences.

    `fn` must rebuild the graph deterministically from the current parameter
    values (fix any sampling noise before calling).  Large parameters are
    probed at `max_entries` randomly chosen entries.  Meaningful only on
    64-bit graphs away from relu / max-pool kinks.
    """
    analytic = gradients(fn(), params)
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        if flat.size <= max_entries:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in indices:
            saved = flat[i]
            flat[i] = saved + step
            f_plus = float(fn().data)
            flat[i] = saved - step
            f_minus = float(fn().data)
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            rel = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-6)
            worst = max(worst, rel)
        report[name] = worst
    return GradCheckReport(report)
