"""Reverse-mode automatic differentiation on a dynamic tape of scalar nodes.

Each operation records one node carrying its value and the local partial
derivatives with respect to its parents. Gradients of a scalar root are
obtained by a single reverse sweep over the creation-ordered tape, which is
topologically sorted by construction.
"""

from __future__ import annotations

import math

__all__ = [
    "Tape",
    "Value",
    "exp",
    "log",
    "max0",
    "sigmoid",
    "tanh",
    "square",
    "lipswish",
    "clip01",
    "absval",
    "vdot",
    "vsum",
]


class Value:
    """A scalar node of the computation graph.

    ``parents`` is a flat tuple ``(p0, d0, p1, d1, ...)`` of parent nodes and
    the local partials captured when the node was created. Leaves have an
    empty tuple. ``backward`` only ever touches ``g``; values are immutable
    once recorded.
    """

    __slots__ = ("v", "g", "i", "op", "parents", "tape")

    def __init__(self, v, tape, op="leaf", parents=()):
        self.v = v
        self.g = 0.0
        self.op = op
        self.parents = parents
        self.tape = tape
        self.i = len(tape.nodes)
        tape.nodes.append(self)

    def __repr__(self):
        return f"Value({self.v!r}, op={self.op!r}, grad={self.g!r})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Value):
            return Value(self.v + other.v, self.tape, "add", (self, 1.0, other, 1.0))
        return Value(self.v + other, self.tape, "add", (self, 1.0))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Value):
            return Value(self.v - other.v, self.tape, "sub", (self, 1.0, other, -1.0))
        return Value(self.v - other, self.tape, "sub", (self, 1.0))

    def __rsub__(self, other):
        return Value(other - self.v, self.tape, "sub", (self, -1.0))

    def __mul__(self, other):
        if isinstance(other, Value):
            return Value(self.v * other.v, self.tape, "mul", (self, other.v, other, self.v))
        return Value(self.v * other, self.tape, "mul", (self, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Value):
            if other.v == 0.0:
                raise ZeroDivisionError("division by a zero-valued node")
            inv = 1.0 / other.v
            return Value(
                self.v * inv, self.tape, "div", (self, inv, other, -self.v * inv * inv)
            )
        if other == 0.0:
            raise ZeroDivisionError("division by zero")
        inv = 1.0 / other
        return Value(self.v * inv, self.tape, "div", (self, inv))

    def __rtruediv__(self, other):
        if self.v == 0.0:
            raise ZeroDivisionError("division by a zero-valued node")
        inv = 1.0 / self.v
        return Value(other * inv, self.tape, "div", (self, -other * inv * inv))

    def __neg__(self):
        return Value(-self.v, self.tape, "neg", (self, -1.0))


class Tape:
    """Creation-ordered record of every node built during a forward pass.

    Nodes always appear after their parents, so a reverse walk is a valid
    topological traversal. A tape is single-threaded; run concurrent work on
    separate tapes.
    """

    def __init__(self):
        self.nodes: list[Value] = []

    def __len__(self):
        return len(self.nodes)

    def value(self, x: float) -> Value:
        """Record a leaf node (input, constant, or parameter)."""
        return Value(float(x), self, "leaf", ())

    # `const` reads better at call sites that lift plain numbers.
    const = value

    def lift(self, x) -> Value:
        return x if isinstance(x, Value) else self.value(x)

    def affine(self, weights, inputs, bias) -> Value:
        """Fused dot(weights, inputs) + bias as a single node.

        Equivalent to a chain of mul/add primitives (see ``vdot``) but records
        one node with 2k+1 parent entries, which keeps tapes for repeated MLP
        evaluations small.
        """
        acc = bias.v
        parents = [bias, 1.0]
        ap = parents.append
        for w, x in zip(weights, inputs):
            acc += w.v * x.v
            ap(w)
            ap(x.v)
            ap(x)
            ap(w.v)
        return Value(acc, self, "affine", tuple(parents))

    def zero_grads(self) -> None:
        for n in self.nodes:
            n.g = 0.0

    def backward(self, root: Value) -> None:
        """Accumulate d(root)/d(node) into ``g`` for every node feeding root.

        Repeated calls without ``zero_grads`` sum their contributions. The
        sweep uses a scratch adjoint array so prior accumulated gradients
        never leak into the current pass.
        """
        if root.tape is not self:
            raise ValueError("root is not registered on this tape")
        nodes = self.nodes
        adj = [0.0] * (root.i + 1)
        adj[root.i] = 1.0
        for k in range(root.i, -1, -1):
            a = adj[k]
            if a != 0.0:
                it = iter(nodes[k].parents)
                for p in it:
                    adj[p.i] += next(it) * a
        for k in range(root.i + 1):
            a = adj[k]
            if a != 0.0:
                nodes[k].g += a


# -- primitive functions, generic over Value and float ----------------------


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def exp(x):
    if isinstance(x, Value):
        e = math.exp(x.v)
        return Value(e, x.tape, "exp", (x, e))
    return math.exp(x)


def log(x):
    if isinstance(x, Value):
        if x.v <= 0.0:
            raise ValueError(f"log of non-positive value {x.v}")
        return Value(math.log(x.v), x.tape, "log", (x, 1.0 / x.v))
    if x <= 0.0:
        raise ValueError(f"log of non-positive value {x}")
    return math.log(x)


def max0(x):
    """max(x, 0); the flat branch (x <= 0) has zero local partial."""
    if isinstance(x, Value):
        if x.v > 0.0:
            return Value(x.v, x.tape, "max0", (x, 1.0))
        return Value(0.0, x.tape, "max0", (x, 0.0))
    return x if x > 0.0 else 0.0


def sigmoid(x):
    if isinstance(x, Value):
        s = _sigmoid(x.v)
        return Value(s, x.tape, "sigmoid", (x, s * (1.0 - s)))
    return _sigmoid(x)


def tanh(x):
    if isinstance(x, Value):
        t = math.tanh(x.v)
        return Value(t, x.tape, "tanh", (x, 1.0 - t * t))
    return math.tanh(x)


def square(x):
    if isinstance(x, Value):
        return Value(x.v * x.v, x.tape, "square", (x, 2.0 * x.v))
    return x * x


def lipswish(x):
    """x * sigmoid(x) / 1.1, Lipschitz with constant <= 1."""
    if isinstance(x, Value):
        s = _sigmoid(x.v)
        d = (s + x.v * s * (1.0 - s)) / 1.1
        return Value(x.v * s / 1.1, x.tape, "lipswish", (x, d))
    return x * _sigmoid(x) / 1.1


def clip01(x):
    """Clamp to [0, 1] with a straight-through local partial of 1."""
    if isinstance(x, Value):
        v = 0.0 if x.v < 0.0 else (1.0 if x.v > 1.0 else x.v)
        return Value(v, x.tape, "clip01", (x, 1.0))
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def absval(x):
    """|x| built from the max0 primitive: max0(x) + max0(-x)."""
    if isinstance(x, Value):
        return max0(x) + max0(-x)
    return abs(x)


def vdot(xs, ys):
    """Dot product composed from scalar mul/add primitives."""
    acc = xs[0] * ys[0]
    for a, b in zip(xs[1:], ys[1:]):
        acc = acc + a * b
    return acc


def vsum(xs):
    acc = xs[0]
    for x in xs[1:]:
        acc = acc + x
    return acc
