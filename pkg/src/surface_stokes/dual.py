"""Forward-mode dual numbers over R^3, nestable for second derivatives.

A :class:`Dual` carries a value and a tuple of directional derivatives.
Values and derivatives may be numpy arrays (vectorised over points) or
other :class:`Dual` objects, which gives second derivatives by nesting.
"""
from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "der", "depth")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, val, der):
        self.val = val
        self.der = tuple(der)
        self.depth = val.depth + 1 if isinstance(val, Dual) else 1

    def _same_layer(self, other):
        return isinstance(other, Dual) and other.depth == self.depth

    def _lift(self, other):
        if self._same_layer(other):
            return other
        # anything from a shallower layer is a constant at this layer
        return Dual(other, (0.0,) * len(self.der))

    def __add__(self, other):
        if isinstance(other, Dual) and other.depth > self.depth:
            return NotImplemented
        o = self._lift(other)
        return Dual(self.val + o.val, [a + b for a, b in zip(self.der, o.der)])

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, [-a for a in self.der])

    def __sub__(self, other):
        if isinstance(other, Dual) and other.depth > self.depth:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return -self + other

    def __mul__(self, other):
        if isinstance(other, Dual) and other.depth > self.depth:
            return NotImplemented
        if not self._same_layer(other):
            return Dual(self.val * other, [a * other for a in self.der])
        return Dual(
            self.val * other.val,
            [self.val * b + a * other.val for a, b in zip(self.der, other.der)],
        )

    __rmul__ = __mul__

    def reciprocal(self):
        r = 1.0 / self.val
        r2 = r * r
        return Dual(r, [-a * r2 for a in self.der])

    def __truediv__(self, other):
        if isinstance(other, Dual) and other.depth > self.depth:
            return NotImplemented
        if not self._same_layer(other):
            return self * (1.0 / other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = 1.0
        for _ in range(n):
            out = self * out
        return out

    def sqrt(self):
        s = sqrt(self.val)
        half_inv = 0.5 / s
        return Dual(s, [a * half_inv for a in self.der])

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"


def sqrt(x):
    if isinstance(x, Dual):
        return x.sqrt()
    return np.sqrt(x)


def value(x):
    """Strip all dual layers."""
    while isinstance(x, Dual):
        x = x.val
    return x


def seed(coords):
    """Seed the three coordinates as independent variables."""
    return [
        Dual(c, [1.0 if j == k else 0.0 for j in range(3)])
        for k, c in enumerate(coords)
    ]


def jacobian(field, coords):
    """Jacobian ``J[i][j] = d field_i / d x_j`` of a vector field at ``coords``.

    ``coords`` may themselves be duals; entries of the result then carry the
    outer derivative layer.
    """
    out = field(seed(coords))
    return [[_der(fi, j) for j in range(3)] for fi in out]


def gradient(scalar, coords):
    s = scalar(seed(coords))
    return [_der(s, j) for j in range(3)]


def _der(x, j):
    if isinstance(x, Dual):
        return x.der[j]
    # constant component
    return 0.0
