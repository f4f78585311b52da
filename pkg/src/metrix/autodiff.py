"""Scalar reverse-mode automatic differentiation on an explicit tape.

Every loss in this package is assembled from these primitives, so its
gradient with respect to any recorded scalar is exact and can be checked
against central finite differences.
"""

import math

__all__ = [
    "DomainError",
    "Tape",
    "Var",
    "lift",
    "exp",
    "log",
    "hinge",
    "dot",
    "vsum",
    "backward",
    "finite_diff",
]


class DomainError(ValueError):
    """An operation was evaluated outside its mathematical domain."""


class Tape:
    """Append-only record of scalar operations in topological order.

    Node i stores its forward value, the indices of its parents (all < i)
    and the local partial derivative with respect to each parent. A tape is
    single-writer; independent computations use independent tapes.
    """

    __slots__ = ("values", "parents", "partials", "grad")

    def __init__(self):
        self.values = []
        self.parents = []
        self.partials = []
        self.grad = None

    def __len__(self):
        return len(self.values)

    def push(self, value, parents=(), partials=()):
        """Append a node and return its index."""
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        return len(self.values) - 1

    def var(self, x):
        """Record a leaf node holding the finite float ``x``."""
        x = float(x)
        if not math.isfinite(x):
            raise DomainError(f"cannot lift non-finite value {x!r}")
        return Var(self, self.push(x))


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def grad(self):
        """Gradient slot filled by the most recent :func:`backward`."""
        return self.tape.grad[self.index]

    def __repr__(self):
        return f"Var({self.value!r} @ {self.index})"

    def __add__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return Var(t, t.push(self.value + other.value,
                                 (self.index, other.index), (1.0, 1.0)))
        return Var(t, t.push(self.value + other, (self.index,), (1.0,)))

    __radd__ = __add__

    def __neg__(self):
        t = self.tape
        return Var(t, t.push(-self.value, (self.index,), (-1.0,)))

    def __sub__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return Var(t, t.push(self.value - other.value,
                                 (self.index, other.index), (1.0, -1.0)))
        return Var(t, t.push(self.value - other, (self.index,), (1.0,)))

    def __rsub__(self, other):
        t = self.tape
        return Var(t, t.push(other - self.value, (self.index,), (-1.0,)))

    def __mul__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return Var(t, t.push(self.value * other.value,
                                 (self.index, other.index),
                                 (other.value, self.value)))
        other = float(other)
        return Var(t, t.push(self.value * other, (self.index,), (other,)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        t = self.tape
        if isinstance(other, Var):
            d = other.value
            if d == 0.0:
                raise DomainError("division by zero")
            return Var(t, t.push(self.value / d,
                                 (self.index, other.index),
                                 (1.0 / d, -self.value / (d * d))))
        other = float(other)
        if other == 0.0:
            raise DomainError("division by zero")
        return Var(t, t.push(self.value / other, (self.index,), (1.0 / other,)))

    def __rtruediv__(self, other):
        t = self.tape
        d = self.value
        if d == 0.0:
            raise DomainError("division by zero")
        other = float(other)
        return Var(t, t.push(other / d, (self.index,), (-other / (d * d),)))


def lift(x, tape):
    """Record ``x`` as a leaf node on ``tape``."""
    return tape.var(x)


def exp(v):
    t = v.tape
    y = math.exp(v.value)
    return Var(t, t.push(y, (v.index,), (y,)))


def log(v):
    if v.value <= 0.0:
        raise DomainError(f"log of non-positive value {v.value!r}")
    t = v.tape
    return Var(t, t.push(math.log(v.value), (v.index,), (1.0 / v.value,)))


def hinge(v):
    """Positive part [x]+ with subgradient 0 at the kink."""
    t = v.tape
    x = v.value
    if x > 0.0:
        return Var(t, t.push(x, (v.index,), (1.0,)))
    return Var(t, t.push(0.0, (v.index,), (0.0,)))


def dot(us, vs):
    """Inner product of two equal-length sequences of :class:`Var`."""
    if len(us) != len(vs):
        raise ValueError(f"dot of lengths {len(us)} and {len(vs)}")
    if not us:
        raise ValueError("dot of empty sequences")
    acc = us[0] * vs[0]
    for u, v in zip(us[1:], vs[1:]):
        acc = acc + u * v
    return acc


def vsum(vs, tape):
    """Sum of a sequence of :class:`Var`; the empty sum lifts to 0."""
    if not vs:
        return tape.var(0.0)
    acc = vs[0]
    for v in vs[1:]:
        acc = acc + v
    return acc


def backward(root):
    """Reverse sweep from ``root``; returns one gradient per tape node.

    The returned list is also stored on ``root.tape.grad``. Node i of the
    tape receives d(root)/d(node i); nodes the root does not depend on get
    0, the root itself gets 1.
    """
    tape = root.tape
    values = tape.values
    parents = tape.parents
    partials = tape.partials
    grad = [0.0] * len(values)
    grad[root.index] = 1.0
    for i in range(root.index, -1, -1):
        g = grad[i]
        if g == 0.0:
            continue
        for p, d in zip(parents[i], partials[i]):
            grad[p] += d * g
    tape.grad = grad
    return grad


def finite_diff(f, xs, h=1e-4):
    """Central-difference gradient of a scalar function of a float list."""
    if h <= 0.0:
        raise ValueError(f"step must be positive, got {h}")
    xs = [float(x) for x in xs]
    out = []
    for i in range(len(xs)):
        lo = list(xs)
        hi = list(xs)
        lo[i] -= h
        hi[i] += h
        out.append((f(hi) - f(lo)) / (2.0 * h))
    return out
