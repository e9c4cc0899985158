"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A :class:`Tensor` wraps a ``(rows, cols)`` numpy array and records the op
that produced it. Calling :func:`backward` on a scalar-shaped tensor
accumulates gradients into every upstream tensor with ``requires_grad``.

Supported ops: matmul/affine, relu, tanh, elementwise add/sub/mul/neg,
square, sqrt, abs, hinge penalties, column slice/concat, and the
sum/mean/max reductions. Broadcasting is limited to what the training
graphs need: equal shapes, a ``(1, d)`` row against ``(n, d)``, a
``(n, 1)`` column against ``(n, d)``, and ``(1, 1)`` scalars.

Single-threaded by design: one tape per training step, no shared state.
"""

import numpy as np

from . import kernels
from .errors import DimensionError, GraphError, NonFiniteError


def _as_value(x):
    """Coerce scalars / array-likes to a 2-D float64 array."""
    if isinstance(x, Tensor):
        raise TypeError("pass Tensor values through ops, not _as_value")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


class Tensor:
    """Node of the reverse-mode graph: a value plus its provenance."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)


def constant(x):
    """Graph leaf that does not require gradients."""
    return Tensor(_as_value(x), requires_grad=False, op="const")


def parameter(x):
    """Trainable graph leaf."""
    return Tensor(_as_value(x), requires_grad=True, op="param")


def _wrap(x):
    return x if isinstance(x, Tensor) else constant(x)


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after a broadcasted forward op."""
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    if grad.shape != shape:
        raise DimensionError(f"cannot reduce grad {grad.shape} to {shape}")
    return grad


def _accumulate(t, g):
    # .grad buffers are never mutated in place, so aliasing g is safe
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _binary(a, b, out_value, op, backward):
    a, b = _wrap(a), _wrap(b)
    track = _needs_grad(a, b)
    return Tensor(out_value(a.value, b.value), requires_grad=track,
                  parents=(a, b) if track else (), backward=backward if track else None,
                  op=op)


def _check_broadcast(x, y, op):
    sx, sy = x.shape, y.shape
    ok = (sx == sy
          or (sx[1] == sy[1] and (sx[0] == 1 or sy[0] == 1))
          or (sx[0] == sy[0] and (sx[1] == 1 or sy[1] == 1))
          or sx == (1, 1) or sy == (1, 1))
    if not ok:
        raise DimensionError(f"{op}: incompatible shapes {sx} and {sy}")


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.value, b.value, "add")

    def bwd(node, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return _binary(a, b, lambda x, y: x + y, "add", bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.value, b.value, "sub")

    def bwd(node, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _binary(a, b, lambda x, y: x - y, "sub", bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.value, b.value, "mul")

    def bwd(node, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _binary(a, b, lambda x, y: x * y, "mul", bwd)


def neg(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, -g)

    return Tensor(-a.value, a.requires_grad, (a,) if a.requires_grad else (),
                  bwd if a.requires_grad else None, "neg")


def _unary(a, out_value, op, backward):
    a = _wrap(a)
    track = a.requires_grad
    return Tensor(out_value, requires_grad=track, parents=(a,) if track else (),
                  backward=backward if track else None, op=op)


def square(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, 2.0 * a.value * g)

    return _unary(a, a.value * a.value, "square", bwd)


def sqrt(a):
    a = _wrap(a)
    out = np.sqrt(a.value)

    def bwd(node, g):
        _accumulate(a, g * (0.5 / node.value))

    return _unary(a, out, "sqrt", bwd)


def abs_val(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, kernels.abs_grad(a.value, g))

    return _unary(a, kernels.abs_val(a.value), "abs", bwd)


def relu(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, kernels.relu_grad(a.value, g))

    return _unary(a, kernels.relu(a.value), "relu", bwd)


def tanh(a):
    a = _wrap(a)
    out = kernels.tanh(a.value)

    def bwd(node, g):
        _accumulate(a, kernels.tanh_grad(node.value, g))

    return _unary(a, out, "tanh", bwd)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul: {a.value.shape} @ {b.value.shape}")

    def bwd(node, g):
        if a.requires_grad:
            _accumulate(a, g @ b.value.T)
        if b.requires_grad:
            _accumulate(b, a.value.T @ g)

    return _binary(a, b, lambda x, y: x @ y, "matmul", bwd)


def affine(x, w, b):
    """x @ w + b with a row-vector bias; the layer primitive."""
    return add(matmul(x, w), b)


def slice_cols(a, start, stop):
    a = _wrap(a)
    n, d = a.value.shape
    if not (0 <= start <= stop <= d):
        raise DimensionError(f"slice_cols[{start}:{stop}] out of range for {a.value.shape}")
    out = np.ascontiguousarray(a.value[:, start:stop])

    def bwd(node, g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        _accumulate(a, full)

    return _unary(a, out, "slice_cols", bwd)


def concat_cols(parts):
    parts = [_wrap(p) for p in parts]
    rows = {p.value.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ: {sorted(rows)}")
    widths = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    track = _needs_grad(*parts)

    def bwd(node, g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, np.ascontiguousarray(g[:, lo:hi]))

    return Tensor(np.concatenate([p.value for p in parts], axis=1), track,
                  tuple(parts) if track else (), bwd if track else None, "concat_cols")


def row_sum(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    return _unary(a, a.value.sum(axis=1, keepdims=True), "row_sum", bwd)


def square_row_sum(a):
    """Fused per-row sum of squares: the equality-penalty reduction."""
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, kernels.square_row_sum_grad(a.value, g))

    return _unary(a, kernels.square_row_sum(a.value), "square_row_sum", bwd)


def hinge_row_sum(a):
    """Fused per-row sum of relu: the inequality-penalty reduction."""
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, kernels.hinge_row_sum_grad(a.value, g))

    return _unary(a, kernels.hinge_row_sum(a.value), "hinge_row_sum", bwd)


def sum_all(a):
    a = _wrap(a)

    def bwd(node, g):
        _accumulate(a, np.full_like(a.value, g[0, 0]))

    return _unary(a, np.array([[a.value.sum()]]), "sum_all", bwd)


def mean_all(a):
    a = _wrap(a)
    scale = 1.0 / a.value.size

    def bwd(node, g):
        _accumulate(a, np.full_like(a.value, g[0, 0] * scale))

    return _unary(a, np.array([[a.value.mean()]]), "mean_all", bwd)


def max_all(a):
    """Max over all entries; subgradient routed to the first argmax."""
    a = _wrap(a)
    idx = np.unravel_index(np.argmax(a.value), a.value.shape)

    def bwd(node, g):
        full = np.zeros_like(a.value)
        full[idx] = g[0, 0]
        _accumulate(a, full)

    return _unary(a, np.array([[a.value[idx]]]), "max_all", bwd)


def topo_order(root):
    """Parents-before-children ordering of the graph below ``root``."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, check_finite=False):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below ``loss``.

    ``loss`` must be scalar-shaped and produced by recorded ops. Gradients
    add onto existing ``.grad`` buffers; zero them between steps.
    """
    if loss.value.shape != (1, 1):
        raise GraphError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if loss._backward is None and not loss._parents:
        raise GraphError("backward on an unrecorded graph (loss is a leaf)")
    order = topo_order(loss)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        if check_finite and not np.isfinite(node.grad).all():
            raise NonFiniteError(f"non-finite gradient flowing through op '{node.op}'")
        node._backward(node, node.grad)


def find_nonfinite(root):
    """Name the first op (in forward order) whose value or grad is non-finite."""
    for node in topo_order(root):
        if not np.isfinite(node.value).all():
            return f"value of op '{node.op}'"
        if node.grad is not None and not np.isfinite(node.grad).all():
            return f"gradient of op '{node.op}'"
    return None


def kink_signature(root, ops=("relu", "hinge_row_sum", "abs", "max_all")):
    """Activation-pattern fingerprint of every kinked op in the graph.

    Two finite-difference evaluations whose signatures differ crossed a
    nondifferentiable point between them; those comparisons are excluded
    by the gradient checker.
    """
    parts = []
    for node in topo_order(root):
        if node.op not in ops or not node._parents:
            continue
        val = node._parents[0].value
        if node.op == "max_all":
            parts.append(val == val.max())
        else:
            parts.append(val > 0.0)
    if not parts:
        return np.zeros(0, dtype=bool)
    return np.concatenate([p.ravel() for p in parts])


def check_gradients(params, loss_fn, step=1e-5, kink_tol=1e-7):
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` rebuilds the loss graph from the current parameter values.
    Returns a dict with ``max_rel_err``, per-parameter errors, and the count
    of entries excluded for sitting next to (or crossing) a relu-style kink.

    Relative error uses ``|a - f| / max(|a|, |f|, 1e-8)``.
    """
    loss = loss_fn()
    for p in params:
        p.grad = None
    backward(loss)
    base_sig = kink_signature(loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    max_rel = 0.0
    n_checked = 0
    n_excluded = 0
    per_param = []
    for p, a in zip(params, analytic):
        errs = np.zeros_like(p.value)
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            dn = loss_fn()
            flat[i] = orig
            sig_up, sig_dn = kink_signature(up), kink_signature(dn)
            if sig_up.shape != sig_dn.shape or not np.array_equal(sig_up, sig_dn) \
                    or not np.array_equal(sig_up, base_sig):
                n_excluded += 1
                continue
            fd = (up.value[0, 0] - dn.value[0, 0]) / (2.0 * step)
            av = a.ravel()[i]
            rel = abs(av - fd) / max(abs(av), abs(fd), 1e-8)
            errs.ravel()[i] = rel
            max_rel = max(max_rel, rel)
            n_checked += 1
        per_param.append(errs)
    return {
        "max_rel_err": max_rel,
        "n_checked": n_checked,
        "n_excluded": n_excluded,
        "per_param": per_param,
        "kink_tol": kink_tol,
    }
