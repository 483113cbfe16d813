"""Dense tensors with a reverse-mode gradient tape.

The graph is define-by-run: every operation allocates a fresh output
tensor holding references to its inputs and a closure implementing the
backward rule. Calling ``backward()`` on a scalar output walks the tape
in reverse topological order and accumulates gradients into every
tensor that participated, summing when a tensor is used more than once.

Compute precision is float64 throughout; checkpoints downcast to
float32 at save time (see ``hbmp.training``).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

# Dtype for newly created tensors. Training and evaluation run at
# float64; grad_check temporarily switches the forward pass to extended
# precision so central differences of ~1e-9 gradients stay above the
# subtraction noise floor.
_COMPUTE_DTYPE = np.float64


@contextmanager
def compute_dtype(dtype):
    global _COMPUTE_DTYPE
    prev = _COMPUTE_DTYPE
    _COMPUTE_DTYPE = dtype
    try:
        yield
    finally:
        _COMPUTE_DTYPE = prev


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


# Central differences are only valid away from the non-smooth points of
# |x|, LeakyReLU and max pooling. While tracing is active, those ops
# report their distance to the nearest kink so a gradient-check harness
# can reject probe points that a +/-eps perturbation could push across
# a kink (see hbmp.cli.run_gradcheck).
_KINK_TRACE = None


@contextmanager
def trace_kinks():
    global _KINK_TRACE
    prev = _KINK_TRACE
    _KINK_TRACE = []
    try:
        yield _KINK_TRACE
    finally:
        _KINK_TRACE = prev


def note_kink_margin(margin: float):
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(float(margin))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_COMPUTE_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None  # lazily allocated ndarray, same shape as data
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-accumulate gradients from this scalar into all leaves."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._backward = backward_fn
    return out


# -- core ops -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def bwd(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), bwd)


def _check_broadcast(a, b, name):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{name} shapes incompatible: {a.data.shape} vs {b.data.shape}"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def abs_(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    note_kink_margin(np.abs(a.data).min(initial=np.inf))
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign)

    return _make(np.abs(a.data), (a,), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out_data, tensors, bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a matrix, [:, start:stop]."""
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a matrix, got shape {a.data.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _make(a.data[:, start:stop], (a,), bwd)


def take_rows(table: Tensor, ids) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _make(table.data[ids], (table,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(a.data.sum(), (a,), bwd)


# -- nonlinearities ---------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    """max(0, x) + slope * min(0, x); subgradient at 0 is 1."""
    note_kink_margin(np.abs(a.data).min(initial=np.inf))
    out_data = np.where(a.data > 0, a.data, slope * a.data)
    local = np.where(a.data >= 0, 1.0, slope)

    def bwd(g):
        _accum(a, g * local)

    return _make(out_data, (a,), bwd)


# -- classification loss ----------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"label out of range [0, {c}): {labels}")
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()
    probs = np.exp(logp)

    def bwd(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        _accum(logits, float(g) * d / n)

    return _make(loss, (logits,), bwd)


# -- gradient checking --------------------------------------------------------


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(*inputs)`` must return a scalar Tensor and must rebuild its graph
    on every call. Relative error per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    The analytic pass runs at float64; the difference-quotient passes run
    at extended precision so that coordinates with ~1e-9 gradients are
    not drowned by the float64 subtraction noise floor (~1e-11 at this
    eps), which would otherwise dominate the 1e-8-floored denominator.
    """
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got {out.data.shape}")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    max_err = 0.0
    with compute_dtype(np.longdouble):
        for t, ana in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                f_plus = f(*inputs).data.reshape(())
                flat[j] = orig - eps
                f_minus = f(*inputs).data.reshape(())
                flat[j] = orig
                num = float((f_plus - f_minus) / np.longdouble(2.0 * eps))
                a = ana.reshape(-1)[j]
                err = abs(a - num) / max(1e-8, abs(a) + abs(num))
                max_err = max(max_err, err)
    return max_err
