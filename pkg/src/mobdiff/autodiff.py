"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap float arrays and record a backward closure per op; calling
``backward()`` on a scalar loss runs the tape in reverse topological order.
Gradients are exact (no approximations), which the denoiser test suite
verifies against central finite differences parameter by parameter.

The op set is exactly what the trajectory denoiser needs: broadcasted
arithmetic, matmul, kernel-3 same-padding conv1d (channel-last), pool /
upsample by 2, group statistics via sum/mean, silu, softmax, reshape /
transpose / slice / concat.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g: np.ndarray) -> None:
        # accumulate into an owned buffer: closures may hand out views or
        # share one array between parents, so never take ownership of g
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        np.add(self.grad, g, out=self.grad, casting="unsafe")

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen = set()

        def visit(node: Tensor):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen or not n.requires_grad:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- elementwise arithmetic ----------------------------------------------
    # python scalars take a fast path (no Tensor wrapping) so float32 graphs
    # stay float32 under numpy 2 promotion rules

    def __add__(self, other):
        if isinstance(other, (int, float)):

            def bwd_s(g, a=self):
                a._accumulate(g)

            return Tensor(self.data + other, parents=(self,), backward=bwd_s)
        o = as_tensor(other)

        def bwd(g, a=self, b=o):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor(self.data + o.data, parents=(self, o), backward=bwd)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):

            def bwd_s(g, a=self, c=other):
                a._accumulate(g * c)

            return Tensor(self.data * other, parents=(self,), backward=bwd_s)
        o = as_tensor(other)

        def bwd(g, a=self, b=o):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor(self.data * o.data, parents=(self, o), backward=bwd)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        def bwd(g, a=self):
            a._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        o = as_tensor(other)

        def bwd(g, a=self, b=o):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor(self.data / o.data, parents=(self, o), backward=bwd)

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            def bwd(g, a=self, c=other):
                a._accumulate(-g * c / (a.data * a.data))

            return Tensor(other / self.data, parents=(self,), backward=bwd)
        return as_tensor(other) / self

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")

        def bwd(g, a=self):
            a._accumulate(g * p * a.data ** (p - 1))

        return Tensor(self.data**p, parents=(self,), backward=bwd)

    def __matmul__(self, other):
        o = as_tensor(other)

        def bwd(g, a=self, b=o):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor(self.data @ o.data, parents=(self, o), backward=bwd)

    def __getitem__(self, idx):
        def bwd(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] += g
            a._accumulate(full)

        return Tensor(self.data[idx], parents=(self,), backward=bwd)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def bwd(g, a=self, old=old):
            a._accumulate(g.reshape(old))

        return Tensor(self.data.reshape(shape), parents=(self,), backward=bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bwd(g, a=self, inv=inv):
            a._accumulate(g.transpose(inv))

        return Tensor(self.data.transpose(axes), parents=(self,), backward=bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bwd(g, a=self, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), backward=bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[i] for i in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


# -- nonlinearities ----------------------------------------------------------


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def bwd(g, a=x, s=s):
        a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return Tensor(out, parents=(x,), backward=bwd)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bwd(g, a=x, out=out):
        a._accumulate(g * out)

    return Tensor(out, parents=(x,), backward=bwd)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g, a=x, out=out):
        a._accumulate(g * 0.5 / out)

    return Tensor(out, parents=(x,), backward=bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, a=x, y=y, axis=axis):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate((g - dot) * y)

    return Tensor(y, parents=(x,), backward=bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, ts=ts, offsets=offsets, axis=axis):
        for t, s, e in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(s, e)
                t._accumulate(g[tuple(sl)])

    return Tensor(np.concatenate([t.data for t in ts], axis=axis), parents=tuple(ts), backward=bwd)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Fused group normalization on (B, T, C): statistics over (T, channels
    within each group), then a per-channel affine."""
    b, t, c = x.data.shape
    cg = c // groups
    xg = x.data.reshape(b, t, groups, cg)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    y = xn.reshape(b, t, c)
    out = y * gamma.data + beta.data

    def bwd(g, x=x, gamma=gamma, beta=beta, xn=xn, inv=inv, b=b, t=t, c=c, cg=cg):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 1)))
        if gamma.requires_grad:
            gamma._accumulate((g * xn.reshape(b, t, c)).sum(axis=(0, 1)))
        if x.requires_grad:
            gy = (g * gamma.data).reshape(b, t, groups, cg)
            m1 = gy.mean(axis=(1, 3), keepdims=True)
            m2 = (gy * xn).mean(axis=(1, 3), keepdims=True)
            gx = inv * (gy - m1 - xn * m2)
            x._accumulate(gx.reshape(b, t, c))

    return Tensor(out, parents=(x, gamma, beta), backward=bwd)


# -- structured ops for the 1D UNet (channel-last layouts) -------------------


def conv1d_k3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padding kernel-3 convolution: x (B,T,C), w (3C,O), b (O,)."""
    bsz, t, c = x.data.shape
    cols = kernels.conv_cols(x.data)
    cols2d = cols.reshape(bsz * t, 3 * c)
    y = cols2d @ w.data + b.data

    def bwd(g, x=x, w=w, b=b, cols2d=cols2d, bsz=bsz, t=t, c=c):
        g2d = g.reshape(bsz * t, -1)
        if w.requires_grad:
            w._accumulate(cols2d.T @ g2d)
        if b.requires_grad:
            b._accumulate(g2d.sum(axis=0))
        if x.requires_grad:
            gcols = (g2d @ w.data.T).reshape(bsz, t, 3 * c)
            x._accumulate(kernels.conv_cols_grad(gcols))

    return Tensor(y.reshape(bsz, t, -1), parents=(x, w, b), backward=bwd)


def avg_pool2(x: Tensor) -> Tensor:
    """Halve the time axis by averaging adjacent pairs; T must be even."""
    bsz, t, c = x.data.shape
    y = x.data.reshape(bsz, t // 2, 2, c).mean(axis=2)

    def bwd(g, a=x, bsz=bsz, t=t, c=c):
        gx = np.repeat(g * 0.5, 2, axis=1)
        a._accumulate(gx)

    return Tensor(y, parents=(x,), backward=bwd)


def upsample2(x: Tensor) -> Tensor:
    """Double the time axis by nearest-neighbor repetition."""
    bsz, t, c = x.data.shape
    y = np.repeat(x.data, 2, axis=1)

    def bwd(g, a=x, bsz=bsz, t=t, c=c):
        a._accumulate(g.reshape(bsz, t, 2, c).sum(axis=2))

    return Tensor(y, parents=(x,), backward=bwd)
