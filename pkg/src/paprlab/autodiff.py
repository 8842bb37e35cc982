"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor records its parents and a backward closure as operations are applied;
Tensor.backward() accumulates gradients in reverse topological order of the
recorded tape, which fixes the accumulation order and keeps runs deterministic.
Only what the CNN transmitter/receiver and the training losses need is
implemented; no general broadcasting rules beyond numpy's, no GPU, no graphs.
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers ------------------------------------------

    @staticmethod
    def _lift(x, like=None):
        if isinstance(x, Tensor):
            return x
        dtype = like.dtype if like is not None else None
        return Tensor(np.asarray(x, dtype=dtype))

    @staticmethod
    def _make(data, parents, backward):
        track = any(p.requires_grad for p in parents)
        if not track:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    def _accumulate(self, grad):
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            # keep a reference only; the array may be shared with a sibling,
            # so it is never mutated until this tensor owns a private copy
            self.grad = grad
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += grad
        else:
            self.grad = self.grad + grad
            self._grad_owned = True

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other, self)
        out_data = self.data + other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad)
            if other.requires_grad:
                other._accumulate(grad)

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(grad):
            self._accumulate(-grad)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor._lift(other, self))

    def __rsub__(self, other):
        return Tensor._lift(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        out_data = self.data * other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * other.data)
            if other.requires_grad:
                other._accumulate(grad * self.data)

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        out_data = self.data / other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad / other.data)
            if other.requires_grad:
                other._accumulate(-grad * self.data / other.data**2)

        return Tensor._make(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data**exponent

        def backward(grad):
            self._accumulate(grad * exponent * self.data ** (exponent - 1))

        return Tensor._make(out_data, (self,), backward)

    def matmul(self, other):
        other = Tensor._lift(other, self)
        out_data = self.data @ other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad @ np.swapaxes(other.data, -1, -2))
            if other.requires_grad:
                other._accumulate(np.swapaxes(self.data, -1, -2) @ grad)

        return Tensor._make(out_data, (self, other), backward)

    __matmul__ = matmul

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        old_shape = self.data.shape
        out_data = self.data.reshape(*shape)

        def backward(grad):
            self._accumulate(grad.reshape(old_shape))

        return Tensor._make(out_data, (self,), backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(grad):
            full = np.zeros_like(self.data)
            np.add.at(full, key, grad)
            self._accumulate(full)

        return Tensor._make(out_data, (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor._make(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def max(self):
        """Global max; gradient splits evenly across ties."""
        out_data = self.data.max()

        def backward(grad):
            mask = self.data == out_data
            self._accumulate(grad * mask / mask.sum())

        return Tensor._make(out_data, (self,), backward)

    # -- elementwise nonlinearities ------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(grad):
            # subgradient at 0 taken as 0
            self._accumulate(grad * (self.data > 0))

        return Tensor._make(out_data, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(grad):
            self._accumulate(grad * out_data)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(grad):
            self._accumulate(grad / self.data)

        return Tensor._make(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(grad):
            self._accumulate(grad / (2.0 * out_data))

        return Tensor._make(out_data, (self,), backward)

    def softplus(self):
        """log(1 + exp(x)), numerically stable."""
        out_data = np.logaddexp(0.0, self.data)

        def backward(grad):
            self._accumulate(grad / (1.0 + np.exp(-self.data)))

        return Tensor._make(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(grad):
            self._accumulate(grad * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), backward)

    # -- backward pass -------------------------------------------------------

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward on a tensor with requires_grad=False")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be supplied for non-scalar output")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None
        self._grad_owned = False


def parameter(data):
    """Trainable leaf tensor."""
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)


def concatenate(tensors, axis):
    """Concatenate along an axis, differentiable."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * grad.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(grad[tuple(idx)])

    return Tensor._make(out_data, tuple(tensors), backward)


def stack_last(tensors):
    """Stack along a new trailing axis."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=-1)

    def backward(grad):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(grad[..., i])

    return Tensor._make(out_data, tuple(tensors), backward)


def _band_matrix(weights, dilation, length):
    """Expand (C, k) taps into per-channel banded matrices (C, L, L) with
    band[c, u, t] = weights[c, j] where u = t + (j - (k-1)/2)*dilation; the
    symmetric zero padding of the convolution is folded into the band."""
    c, k = weights.shape
    pad = (k - 1) * dilation // 2
    band = np.zeros((c, length, length), dtype=weights.dtype)
    t = np.arange(length)
    for j in range(k):
        rows = t + j * dilation - pad
        inside = (rows >= 0) & (rows < length)
        band[:, rows[inside], t[inside]] = weights[:, j, None]
    return band


def depthwise_conv1d(x, weights, dilation=1):
    """Per-channel 1D convolution with symmetric zero padding.

    x: Tensor (B, L, C); weights: Tensor (C, k) with k odd. Output (B, L, C),
    length preserved. Runs as a matmul batched over channels so BLAS does
    the work.
    """
    k = weights.data.shape[1]
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    pad = (k - 1) * dilation // 2
    _, length, _ = x.data.shape
    band = _band_matrix(weights.data, dilation, length)
    xc = np.ascontiguousarray(x.data.transpose(2, 0, 1))  # (C, B, L)
    out_data = np.ascontiguousarray((xc @ band).transpose(1, 2, 0))

    def backward(grad):
        gc = np.ascontiguousarray(grad.transpose(2, 0, 1))  # (C, B, L)
        if x.requires_grad:
            gx = gc @ band.transpose(0, 2, 1)
            x._accumulate(np.ascontiguousarray(gx.transpose(1, 2, 0)))
        if weights.requires_grad:
            m = xc.transpose(0, 2, 1) @ gc  # (C, L, L): sum over batch
            gw = np.stack(
                [
                    np.trace(m, offset=pad - j * dilation, axis1=1, axis2=2)
                    for j in range(k)
                ],
                axis=1,
            )
            weights._accumulate(gw)

    return Tensor._make(out_data, (x, weights), backward)


class Adam:
    """Adam optimizer with bias-corrected moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError("gradient/parameter shape mismatch")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g**2
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
