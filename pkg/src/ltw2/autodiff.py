"""Reverse-mode automatic differentiation over float64 NumPy arrays.

A :class:`Tape` records every primitive applied to a :class:`Var` in
creation order, so the node list is already topologically sorted and
:func:`backward` is a single reverse sweep. Plain ``ndarray`` operands are
treated as constants; calling a primitive with no ``Var`` operand simply
evaluates it and returns an ``ndarray`` (forward-only mode).

Conventions at non-smooth points: ``relu`` and ``abs`` have gradient 0 at
0, and the gradient of ``sqrt`` at exactly 0 is clamped to 0.
"""
import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class Tape:
    """Append-only record of primitive operations.

    Attributes:
        parents: For each node, a tuple of parent node indices.
        vjps: For each node, the vector-Jacobian closure (``None`` for leaves).
        leaves: Leaf ``Var`` objects in creation order.
    """

    def __init__(self):
        self.parents = []
        self.vjps = []
        self.leaves = []

    def __len__(self):
        return len(self.parents)

    def leaf(self, value):
        """Registers ``value`` as a differentiable input and returns its Var."""
        v = Var(np.array(value, dtype=np.float64), self, len(self.parents))
        self.parents.append(())
        self.vjps.append(None)
        self.leaves.append(v)
        return v

    def _record(self, value, parents, vjp):
        v = Var(value, self, len(self.parents))
        self.parents.append(tuple(p.index for p in parents))
        self.vjps.append(vjp)
        return v


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None  # make NumPy defer binary operators to Var

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def value_of(x):
    """Returns the underlying array of a Var, or ``x`` as a float array."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from exc


def _binary(a, b, value, ga, gb):
    # ga/gb map the upstream gradient to full-shape gradients for a and b.
    tape = _tape_of(a, b)
    if tape is None:
        return value
    av, bv = isinstance(a, Var), isinstance(b, Var)
    sa = value_of(a).shape
    sb = value_of(b).shape
    if av and bv:
        return tape._record(value, (a, b),
                            lambda g: (_unbroadcast(ga(g), sa), _unbroadcast(gb(g), sb)))
    if av:
        return tape._record(value, (a,), lambda g: (_unbroadcast(ga(g), sa),))
    return tape._record(value, (b,), lambda g: (_unbroadcast(gb(g), sb),))


def _unary(x, value, gx):
    if not isinstance(x, Var):
        return value
    return x.tape._record(value, (x,), lambda g: (gx(g),))


def add(a, b):
    """Elementwise sum with broadcasting."""
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av, bv)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def sub(a, b):
    """Elementwise difference with broadcasting."""
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av, bv)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g)


def mul(a, b):
    """Elementwise product with broadcasting."""
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av, bv)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b):
    """Elementwise quotient with broadcasting."""
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av, bv)
    out = av / bv
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def neg(x):
    return _unary(x, -value_of(x), lambda g: -g)


def scale(x, c):
    """Multiplies ``x`` by the constant scalar ``c``."""
    c = float(c)
    return _unary(x, c * value_of(x), lambda g: c * g)


def square(x):
    xv = value_of(x)
    return _unary(x, xv * xv, lambda g: 2.0 * xv * g)


def power(x, p):
    """Elementwise ``x**p`` for a constant exponent."""
    xv = value_of(x)
    p = float(p)
    return _unary(x, xv ** p, lambda g: p * xv ** (p - 1.0) * g)


def relu(x):
    xv = value_of(x)
    mask = xv > 0
    return _unary(x, np.where(mask, xv, 0.0), lambda g: g * mask)


def abs(x):  # noqa: A001 - mirrors numpy naming
    xv = value_of(x)
    sign = np.sign(xv)
    return _unary(x, np.abs(xv), lambda g: g * sign)


def sqrt(x):
    """Elementwise square root; gradient at exactly 0 is taken as 0."""
    xv = value_of(x)
    if np.any(xv < 0):
        raise ValueError("sqrt of a negative value")
    out = np.sqrt(xv)
    pos = out > 0
    safe = np.where(pos, out, 1.0)
    return _unary(x, out, lambda g: np.where(pos, 0.5 * g / safe, 0.0))


def exp(x):
    out = np.exp(value_of(x))
    return _unary(x, out, lambda g: g * out)


def log(x):
    xv = value_of(x)
    if np.any(xv <= 0):
        raise ValueError("log of a nonpositive value")
    return _unary(x, np.log(xv), lambda g: g / xv)


def softplus(x):
    xv = value_of(x)
    out = np.logaddexp(0.0, xv)
    sig = np.exp(xv - out)
    return _unary(x, out, lambda g: g * sig)


def sum(x, axis=None):  # noqa: A001
    """Sum over ``axis`` (all axes when ``None``)."""
    xv = value_of(x)
    shape = xv.shape
    out = np.sum(xv, axis=axis)
    if axis is None:
        return _unary(x, out, lambda g: np.broadcast_to(g, shape))
    ax = axis if isinstance(axis, tuple) else (axis,)
    ax = tuple(a % len(shape) for a in ax)
    return _unary(x, out, lambda g: np.broadcast_to(np.expand_dims(g, ax), shape))


def mean(x, axis=None):
    xv = value_of(x)
    if axis is None:
        count = xv.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([xv.shape[a] for a in ax]))
    return scale(sum(x, axis), 1.0 / count)


def matvec(w, x):
    """Batched matrix-vector product: ``(..., m, n) @ (..., n) -> (..., m)``."""
    wv, xv = value_of(w), value_of(x)
    if wv.ndim < 2 or xv.ndim < 1 or wv.shape[-1] != xv.shape[-1]:
        raise ShapeError(f"matvec shapes {wv.shape} and {xv.shape} do not conform")
    try:
        out = np.einsum("...mn,...n->...m", wv, xv)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _binary(w, x, out,
                   lambda g: g[..., :, None] * xv[..., None, :],
                   lambda g: np.einsum("...mn,...m->...n", wv, g))


def matmul(a, b):
    """Matrix product of (batched) matrices."""
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul shapes {av.shape} and {bv.shape} do not conform")
    try:
        out = av @ bv
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _binary(a, b, out,
                   lambda g: g @ np.swapaxes(bv, -1, -2),
                   lambda g: np.swapaxes(av, -1, -2) @ g)


def getitem(x, key):
    """Indexing with NumPy semantics (basic and advanced)."""
    xv = value_of(x)
    out = xv[key]

    basic = _is_basic(key)

    def vjp(g):
        full = np.zeros_like(xv)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return full

    return _unary(x, np.array(out, dtype=np.float64, copy=True), vjp)


def _is_basic(key):
    # Basic indexing never repeats an element, so plain assignment suffices.
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis
               for k in parts)


def gather(x, indices, axis=0):
    """Selects entries of ``x`` at integer ``indices`` along ``axis``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather indices must be one-dimensional")
    xv = value_of(x)
    axis = axis % xv.ndim
    if idx.size and (idx.max() >= xv.shape[axis] or idx.min() < -xv.shape[axis]):
        raise IndexError("gather index out of range")
    out = np.take(xv, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(xv)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return full

    return _unary(x, out, vjp)


def reshape(x, shape):
    xv = value_of(x)
    orig = xv.shape
    return _unary(x, xv.reshape(shape), lambda g: g.reshape(orig))


def concat(xs, axis=0):
    """Concatenates arrays along an existing axis."""
    vals = [value_of(x) for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _joined(xs, out, np.cumsum([v.shape[axis] for v in vals])[:-1],
                   lambda g, bounds: np.split(g, bounds, axis=axis))


def stack(xs, axis=0):
    """Stacks equally shaped arrays along a new axis."""
    vals = [value_of(x) for x in xs]
    try:
        out = np.stack(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    n = len(vals)
    return _joined(xs, out, None,
                   lambda g, _: [np.take(g, k, axis=axis) for k in range(n)])


def _joined(xs, out, bounds, split):
    tape = _tape_of(*xs)
    if tape is None:
        return out
    live = [k for k, x in enumerate(xs) if isinstance(x, Var)]
    parents = [xs[k] for k in live]

    def vjp(g):
        parts = split(g, bounds)
        return tuple(parts[k] for k in live)

    return tape._record(out, parents, vjp)


def record(value, parents, vjp):
    """Records a custom primitive.

    Args:
        value: Output array, computed by the caller.
        parents: Operands; non-Var entries are ignored as constants.
        vjp: Maps the output gradient to a tuple of gradients, one per Var
            in ``parents`` (in order).

    Returns:
        A Var, or ``value`` itself when no operand is a Var.
    """
    live = [p for p in parents if isinstance(p, Var)]
    tape = _tape_of(*live)
    if tape is None:
        return value
    return tape._record(value, live, vjp)


def backward(root):
    """Back-propagates from a scalar root.

    Args:
        root: Scalar-shaped Var.

    Returns:
        List of gradient arrays, one per leaf of ``root.tape`` in creation
        order. Leaves that ``root`` does not depend on get zeros.
    """
    if not isinstance(root, Var):
        raise TypeError("backward needs a Var")
    if root.value.shape != ():
        raise ShapeError(f"backward root must be scalar, got shape {root.value.shape}")
    tape = root.tape
    grads = [None] * (root.index + 1)
    grads[root.index] = np.ones(())
    parents, vjps = tape.parents, tape.vjps
    for i in range(root.index, -1, -1):
        g = grads[i]
        if g is None or vjps[i] is None:
            continue
        for p, gp in zip(parents[i], vjps[i](g)):
            grads[p] = gp if grads[p] is None else grads[p] + gp
    out = []
    for leaf in tape.leaves:
        g = grads[leaf.index] if leaf.index <= root.index else None
        out.append(np.zeros_like(leaf.value) if g is None
                   else np.array(np.broadcast_to(g, leaf.value.shape)))
    return out
