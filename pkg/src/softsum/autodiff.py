"""Reverse-mode automatic differentiation over dense numpy arrays.

Graphs are built eagerly: every operation returns a Node holding the
computed value, references to its input nodes, and a closure mapping the
output gradient back to input gradients. ``backward`` walks the graph
once in reverse topological order and accumulates gradients on every
node it reaches.

Shape discipline is strict. The only implicit broadcast allowed is
scalar-times-tensor in ``mul``; any other mismatch raises ValueError
with the offending shapes. Structured two-dimensional helpers
(``add_rowvec``, ``add_colvec``, ``scale_rows``) exist so that model
code never relies on silent numpy broadcasting.

Concurrency: graph construction and backward are single threaded.
Distinct graphs may be evaluated concurrently as long as they share no
nodes; leaf nodes shared between graphs accumulate gradients, so
concurrent backward over shared parameters is not allowed.
"""

from __future__ import annotations

import numpy as np

# Debug switch: when True every op asserts its output is finite.
CHECK_FINITE = False


class Node:
    """One value in a computation graph.

    ``value`` is a numpy array (possibly 0-d), ``parents`` the input
    nodes, ``op`` a short tag naming the primitive that produced the
    node, and ``grad`` the accumulated gradient after ``backward``.
    Leaf nodes (no parents) keep their gradient across backward calls
    until ``zero_grad``; interior nodes are overwritten per call.
    """

    __slots__ = ("value", "parents", "op", "grad", "_vjp")

    def __init__(self, value, parents=(), op="leaf", vjp=None):
        self.value = value
        self.parents = parents
        self.op = op
        self.grad = None
        self._vjp = vjp
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced by {op!r}")

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return add_const(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value, dtype=None):
    """Wrap an array as a graph leaf that never needs a gradient stream of its own."""
    arr = np.asarray(value, dtype=dtype)
    return Node(arr, op="const")


def leaf(value, dtype=None):
    """Wrap an array as a trainable graph leaf."""
    arr = np.asarray(value, dtype=dtype)
    return Node(arr, op="leaf")


def as_node(x, dtype=None):
    if isinstance(x, Node):
        return x
    return constant(x, dtype=dtype)


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    """Elementwise sum; shapes must match exactly."""
    _require(a.shape == b.shape,
             f"add: shape mismatch {a.shape} vs {b.shape}")
    out_value = a.value + b.value

    def vjp(g):
        return g, g

    return Node(out_value, (a, b), "add", vjp)


def sub(a, b):
    _require(a.shape == b.shape,
             f"sub: shape mismatch {a.shape} vs {b.shape}")

    def vjp(g):
        return g, -g

    return Node(a.value - b.value, (a, b), "sub", vjp)


def mul(a, b):
    """Elementwise product. One side may be scalar shaped; otherwise exact match."""
    if a.shape == b.shape:
        def vjp(g):
            return g * b.value, g * a.value
    elif a.shape == ():
        def vjp(g):
            return np.sum(g * b.value), g * a.value
    elif b.shape == ():
        def vjp(g):
            return g * b.value, np.sum(g * a.value)
    else:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value * b.value, (a, b), "mul", vjp)


def scale(a, c):
    """Multiply by a python float constant."""
    c = float(c)

    def vjp(g):
        return (g * c,)

    return Node(a.value * c, (a,), "scale", vjp)


def add_const(a, c):
    """Shift by a python float constant."""
    c = float(c)

    def vjp(g):
        return (g,)

    return Node(a.value + c, (a,), "add_const", vjp)


def reciprocal(a):
    out_value = 1.0 / a.value

    def vjp(g):
        return (-g * out_value * out_value,)

    return Node(out_value, (a,), "reciprocal", vjp)


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    floor = float(floor)
    keep = a.value > floor

    def vjp(g):
        return (g * keep,)

    return Node(np.maximum(a.value, floor), (a,), "clip_min", vjp)


def sigmoid(a):
    out_value = 1.0 / (1.0 + np.exp(-a.value))

    def vjp(g):
        return (g * out_value * (1.0 - out_value),)

    return Node(out_value, (a,), "sigmoid", vjp)


def tanh(a):
    out_value = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out_value * out_value),)

    return Node(out_value, (a,), "tanh", vjp)


def exp(a):
    out_value = np.exp(a.value)

    def vjp(g):
        return (g * out_value,)

    return Node(out_value, (a,), "exp", vjp)


def log(a):
    def vjp(g):
        return (g / a.value,)

    return Node(np.log(a.value), (a,), "log", vjp)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    """a @ b for (m,n)@(n,k) -> (m,k) or (m,n)@(n,) -> (m,)."""
    _require(a.value.ndim == 2, f"matmul: left operand must be 2-d, got {a.shape}")
    _require(b.value.ndim in (1, 2),
             f"matmul: right operand must be 1-d or 2-d, got {b.shape}")
    _require(a.shape[1] == b.shape[0],
             f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_value = a.value @ b.value

    if b.value.ndim == 2:
        def vjp(g):
            return g @ b.value.T, a.value.T @ g
    else:
        def vjp(g):
            return np.outer(g, b.value), a.value.T @ g

    return Node(out_value, (a, b), "matmul", vjp)


def concat(nodes, axis=0):
    """Concatenate nodes of equal rank along axis."""
    nodes = list(nodes)
    _require(len(nodes) >= 1, "concat: need at least one input")
    ndim = nodes[0].value.ndim
    for n in nodes:
        _require(n.value.ndim == ndim,
                 f"concat: rank mismatch {n.shape} vs {nodes[0].shape}")
    sizes = [n.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)
    out_value = np.concatenate([n.value for n in nodes], axis=axis)

    def vjp(g):
        slicer = [slice(None)] * ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return Node(out_value, tuple(nodes), "concat", vjp)


def rows(table, ids):
    """Row lookup: table (M, E), ids int vector (B,) -> (B, E)."""
    _require(table.value.ndim == 2, f"rows: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids)
    _require(ids.ndim == 1, f"rows: ids must be 1-d, got shape {ids.shape}")
    _require(np.issubdtype(ids.dtype, np.integer), "rows: ids must be integers")
    m = table.shape[0]
    _require(ids.size == 0 or (ids.min() >= 0 and ids.max() < m),
             f"rows: id out of range for table with {m} rows")
    out_value = table.value[ids]

    def vjp(g):
        dt = np.zeros_like(table.value)
        np.add.at(dt, ids, g)
        return (dt,)

    return Node(out_value, (table,), "rows", vjp)


def pick(a, index):
    """Select one entry per row: (B, M) + ids (B,) -> (B,), or (M,) + int -> scalar."""
    if a.value.ndim == 2:
        ids = np.asarray(index)
        _require(ids.shape == (a.shape[0],),
                 f"pick: ids shape {ids.shape} does not match batch {a.shape}")
        _require(ids.min() >= 0 and ids.max() < a.shape[1],
                 f"pick: id out of range for width {a.shape[1]}")
        rows_idx = np.arange(a.shape[0])
        out_value = a.value[rows_idx, ids]

        def vjp(g):
            da = np.zeros_like(a.value)
            da[rows_idx, ids] = g
            return (da,)
    elif a.value.ndim == 1:
        i = int(index)
        _require(0 <= i < a.shape[0],
                 f"pick: index {i} out of range for length {a.shape[0]}")
        out_value = a.value[i]

        def vjp(g):
            da = np.zeros_like(a.value)
            da[i] = g
            return (da,)
    else:
        raise ValueError(f"pick: rank must be 1 or 2, got {a.shape}")
    return Node(out_value, (a,), "pick", vjp)


def sum_all(a):
    """Reduce to a scalar."""
    def vjp(g):
        return (np.full(a.shape, g, dtype=a.value.dtype),)

    return Node(np.asarray(a.value.sum(), dtype=a.value.dtype), (a,), "sum_all", vjp)


def sum_axis(a, axis):
    """Reduce a 2-d node along one axis."""
    _require(a.value.ndim == 2, f"sum_axis: input must be 2-d, got {a.shape}")
    _require(axis in (0, 1), f"sum_axis: axis must be 0 or 1, got {axis}")
    out_value = a.value.sum(axis=axis)

    def vjp(g):
        if axis == 0:
            return (np.broadcast_to(g[None, :], a.shape).copy(),)
        return (np.broadcast_to(g[:, None], a.shape).copy(),)

    return Node(out_value, (a,), "sum_axis", vjp)


def slice_cols(a, lo, hi):
    """Columns [lo, hi) of a 2-d node."""
    _require(a.value.ndim == 2, f"slice_cols: input must be 2-d, got {a.shape}")
    _require(0 <= lo < hi <= a.shape[1],
             f"slice_cols: bad range [{lo}, {hi}) for width {a.shape[1]}")
    out_value = a.value[:, lo:hi]

    def vjp(g):
        da = np.zeros_like(a.value)
        da[:, lo:hi] = g
        return (da,)

    return Node(out_value, (a,), "slice_cols", vjp)


def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return Node(a.value.reshape(shape), (a,), "reshape", vjp)


def add_rowvec(a, v):
    """(B, F) plus (F,): v added to every row."""
    _require(a.value.ndim == 2 and v.value.ndim == 1 and a.shape[1] == v.shape[0],
             f"add_rowvec: shapes {a.shape} and {v.shape} incompatible")

    def vjp(g):
        return g, g.sum(axis=0)

    return Node(a.value + v.value[None, :], (a, v), "add_rowvec", vjp)


def add_colvec(a, v):
    """(B, F) plus (B,): v[i] added to every entry of row i."""
    _require(a.value.ndim == 2 and v.value.ndim == 1 and a.shape[0] == v.shape[0],
             f"add_colvec: shapes {a.shape} and {v.shape} incompatible")

    def vjp(g):
        return g, g.sum(axis=1)

    return Node(a.value + v.value[:, None], (a, v), "add_colvec", vjp)


def scale_rows(a, s):
    """(B, F) with (B,): row i multiplied by s[i]."""
    _require(a.value.ndim == 2 and s.value.ndim == 1 and a.shape[0] == s.shape[0],
             f"scale_rows: shapes {a.shape} and {s.shape} incompatible")

    def vjp(g):
        return g * s.value[:, None], (g * a.value).sum(axis=1)

    return Node(a.value * s.value[:, None], (a, s), "scale_rows", vjp)


def rowdot(a, b):
    """Per-row inner product of two (B, F) nodes -> (B,)."""
    _require(a.value.ndim == 2 and a.shape == b.shape,
             f"rowdot: shape mismatch {a.shape} vs {b.shape}")

    def vjp(g):
        return g[:, None] * b.value, g[:, None] * a.value

    return Node((a.value * b.value).sum(axis=1), (a, b), "rowdot", vjp)


def detach(a):
    """Value passes through, gradient stops here."""
    return Node(a.value, (), "detach")


# ---------------------------------------------------------------------------
# composites


def softmax(a):
    """Stable softmax over the last axis of a 1-d or 2-d node.

    The stabilising shift is taken from the current values and treated
    as a constant, which is exact because softmax is shift invariant.
    """
    if a.value.ndim == 1:
        e = exp(add_const(a, -float(a.value.max())))
        return mul(e, reciprocal(sum_all(e)))
    if a.value.ndim == 2:
        shift = constant(-a.value.max(axis=1), dtype=a.value.dtype)
        e = exp(add_colvec(a, shift))
        return scale_rows(e, reciprocal(sum_axis(e, 1)))
    raise ValueError(f"softmax: rank must be 1 or 2, got {a.shape}")


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    order = []
    seen = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Propagate gradients from a scalar loss.

    Returns a dict mapping each reached leaf node to its total gradient.
    Leaves accumulate into ``.grad`` across calls (clear with
    ``zero_grad``); interior nodes get this call's gradient only.
    Leaves not reachable from the loss are absent from the map, which
    means their gradient is zero.
    """
    if loss.value.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones((), dtype=loss.value.dtype)}
    leaf_grads = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf():
            node.grad = g if node.grad is None else node.grad + g
            leaf_grads[node] = node.grad
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node._vjp(g)):
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaf_grads


def zero_grad(nodes):
    for n in nodes:
        n.grad = None


def finite_difference_gradient(f, theta, step=1e-5):
    """Central-difference gradient of a scalar function of a flat vector.

    f maps a 1-d float64 array to a float. Non-finite evaluations raise
    ValueError naming the coordinate.
    """
    theta = np.asarray(theta, dtype=np.float64)
    _require(theta.ndim == 1, f"finite differences need a flat vector, got {theta.shape}")
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += step
        f_plus = float(f(bumped))
        bumped[i] -= 2.0 * step
        f_minus = float(f(bumped))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
