"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in a globally selectable precision (float32 for
training, float64 for gradient verification). Every differentiable op links
its output to its inputs, so a backward sweep over the recorded graph yields
gradients for arbitrary compositions. The graph is acyclic by construction
and each node is visited exactly once during backpropagation.
"""

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE = np.float32
_DEBUG_NAN = False
_GRAD_ENABLED = True

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_default_dtype(name):
    """Select the global value precision: 'float32' or 'float64'."""
    global _DEFAULT_DTYPE
    if name in ("float32", np.float32):
        _DEFAULT_DTYPE = np.float32
    elif name in ("float64", np.float64):
        _DEFAULT_DTYPE = np.float64
    else:
        raise ValueError(f"unsupported dtype {name!r}")


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_debug_nan(enabled):
    """Toggle NaN/Inf detection on every forward and backward value."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(enabled)


@contextmanager
def no_grad():
    """Suspend graph recording; ops inside produce plain constant tensors."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _check_finite(arr, op, phase):
    if _DEBUG_NAN and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite value in {phase} of op '{op}'")


class Tensor:
    """N-dimensional real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        # All graph values live in the one global precision; constants are
        # cast on entry so mixed-precision promotion can never creep in.
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        _check_finite(self.data, self._op, "forward")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _index(self, key)

    # -- method forms of common ops ------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    """Create an op output; the backward closure is kept only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out._op = op
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    _check_finite(data, op, "forward")
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _make(-a.data, (a,), backward, "neg")


def pow_(a, exponent):
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(data, (a,), backward, "pow")


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward, "exp")


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(data, (a,), backward, "log")


def sqrt(a):
    """Square root; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        safe = np.where(data > 0, data, 1.0)
        return (np.where(data > 0, 0.5 * g / safe, 0.0),)

    return _make(data, (a,), backward, "sqrt")


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), backward, "tanh")


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), backward, "relu")


def abs_(a):
    """Absolute value; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)

    def backward(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), backward, "abs")


def gelu(a):
    """Exact Gaussian error linear unit: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
    data = a.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _make(data, (a,), backward, "gelu")


# -- linear algebra and shape ops ----------------------------------------------


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading batch dims.

    Both operands must be at least 2-D.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), backward, "matmul")


def reshape(a, shape):
    a = as_tensor(a)
    old_shape = a.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def broadcast_to(a, shape):
    a = as_tensor(a)
    old_shape = a.shape

    def backward(g):
        return (_unbroadcast(g, old_shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward, "broadcast_to")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes[:-1])

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward, "concat")


def take(a, indices):
    """Gather rows (axis 0); duplicate indices accumulate gradients."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    data = a.data[indices]

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(out, indices, g)
        return (out,)

    return _make(data, (a,), backward, "take")


def _index(a, key):
    """Basic (slice/int) indexing; each input element appears at most once."""
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        out[key] = g
        return (out,)

    return _make(data.copy(), (a,), backward, "index")


# -- reductions ------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _make(data, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def log_softmax(a, axis=-1):
    """Numerically stable log-softmax along an axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - log_z

    def backward(g):
        soft = np.exp(data)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(data, (a,), backward, "log_softmax")


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


# -- backward driver ---------------------------------------------------------------


def _topo_order(root):
    """Post-order over the recorded graph; iterative to handle deep chains."""
    order = []
    visited = set()
    stack = [(root, False)]
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


def gradient_of(loss, leaves):
    """Differentiate a scalar loss with respect to a list of leaf tensors.

    Returns a dict mapping each leaf to its gradient array. Leaves the loss
    does not depend on get zero gradients of the leaf's shape.
    """
    loss = as_tensor(loss)
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            if node._backward is None:
                continue  # leaves keep their accumulated gradient
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, node._op, "backward")
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
    return {leaf: grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in leaves}


# -- composite helpers used across the model and losses -----------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(centered, inv), gamma), beta)


def l2_normalize(x, axis=-1, eps=1e-12):
    norm = sqrt(add(sum_(mul(x, x), axis=axis, keepdims=True), eps))
    return div(x, norm)


def cosine_rows(u, v, zero_mask=None):
    """Row-wise cosine similarity along the last axis.

    Rows whose norm is zero (per `zero_mask`, computed by the caller from the
    values) contribute cosine 0 and receive no gradient.
    """
    dot = sum_(mul(u, v), axis=-1)
    nu = sqrt(sum_(mul(u, u), axis=-1))
    nv = sqrt(sum_(mul(v, v), axis=-1))
    if zero_mask is None:
        zero_mask = (nu.data == 0) | (nv.data == 0)
    keep = (~zero_mask).astype(u.dtype)
    # Degenerate rows divide by 1 and are then zeroed by the constant mask.
    denom = add(mul(nu, nv), zero_mask.astype(u.dtype))
    return mul(div(dot, denom), Tensor(keep))
