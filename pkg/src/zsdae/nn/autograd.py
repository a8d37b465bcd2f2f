"""A small reverse-mode autodiff engine over numpy arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. The expensive transformer pieces (layer norm, masked softmax,
cross-entropy) are fused ops with hand-written backward passes so that a
training step stays a few dozen numpy calls.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class GraphError(RuntimeError):
    """Raised when backward is called on a node with no graph behind it."""


def _unbroadcast(grad, shape):
    # sum out axes that were broadcast in the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph plumbing -------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g, fresh=False):
        # ``fresh`` marks a newly allocated array that may be adopted without a copy
        if not self.requires_grad:
            return
        if self.grad is None:
            if fresh and isinstance(g, np.ndarray) and g.dtype == self.data.dtype and g.shape == self.shape:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if not self.requires_grad:
            raise GraphError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior nodes release their gradient once pushed back
                    node.grad = None

    # -- elementwise ----------------------------------------------------
    def __add__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        return self + (-_wrap(other, self.dtype))

    def __rsub__(self, other):
        return _wrap(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        a = self
        mask = a.data > 0

        return Tensor._make(a.data * mask, (a,), lambda g: a._accum(g * mask))

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    # -- shape ------------------------------------------------------------
    def reshape(self, *shape):
        a = self
        old = a.shape
        return Tensor._make(a.data.reshape(*shape), (a,), lambda g: a._accum(g.reshape(old)))

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(*axes), (a,), lambda g: a._accum(g.transpose(*inv)))

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad=False, dtype=np.float32, name=None):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad, name=name)


def matmul(a, b):
    """Batched matmul; b may be a 2-D weight broadcast over a's leading axes."""
    if b.ndim == 2 and a.ndim > 2:
        # one large GEMM instead of one per leading index
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw2(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accum((g2 @ b.data.T).reshape(a.shape), fresh=True)
            if b.requires_grad:
                b._accum(a2.T @ g2, fresh=True)

        return Tensor._make((a2 @ b.data).reshape(*lead, b.shape[-1]), (a, b), bw2)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError(f"token id out of range [0, {weight.shape[0]})")

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        weight._accum(gw)

    return Tensor._make(weight.data[ids], (weight,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(-1, keepdims=True)
                            - xhat * (gx * xhat).sum(-1, keepdims=True))
            x._accum(dx)

    return Tensor._make(out, (x, gain, bias), bw)


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to ``mask`` (True = attendable).

    Rows with no attendable entry produce all zeros and zero gradient.
    """
    s = np.where(mask, scores.data, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(s - m)
    z = e.sum(axis=-1, keepdims=True)
    p = e / np.where(z > 0, z, 1.0)

    def bw(g):
        scores._accum(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return Tensor._make(p.astype(scores.dtype, copy=False), (scores,), bw)


def dropout(x, rate, rng, train=True):
    if not train or rate <= 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype) * (1.0 / (1.0 - rate))
    return x * keep


def log_softmax_np(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets, pad_mask=None, label_smoothing=0.0):
    """Mean per-token NLL over non-pad positions.

    ``pad_mask`` is True where a position carries loss. With smoothing ``eps``
    the per-token loss is ``(1-eps)*nll + eps*mean_v(-log p_v)``.
    """
    targets = np.asarray(targets)
    if pad_mask is None:
        pad_mask = np.ones(targets.shape, dtype=bool)
    lp = log_softmax_np(logits.data)
    V = lp.shape[-1]
    nll = -np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
    smooth = -lp.mean(axis=-1)
    per_tok = (1.0 - label_smoothing) * nll + label_smoothing * smooth
    w = pad_mask.astype(lp.dtype)
    n = max(w.sum(), 1.0)
    loss = (per_tok * w).sum() / n

    def bw(g):
        p = np.exp(lp)
        grad = p - label_smoothing / V
        onehot_w = 1.0 - label_smoothing
        np.put_along_axis(
            grad, targets[..., None],
            np.take_along_axis(grad, targets[..., None], axis=-1) - onehot_w, axis=-1)
        logits._accum(grad * (w / n * g)[..., None])

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)
