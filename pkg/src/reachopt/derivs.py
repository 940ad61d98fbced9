"""Forward-mode differentiation with vectorized dual numbers.

A :class:`Dual` carries a value array ``val`` and a tangent array ``der``
whose trailing axis holds one partial derivative per seed direction.
The value may itself be a :class:`Dual`, which gives exact higher-order
derivatives by nesting (used for derivatives of linearizations).

Model code only uses ``+ - * / **``, indexing and the elementary functions
defined here, so the same function evaluates on floats, arrays and duals.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "seed",
    "value",
    "tangent",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "clip",
    "stack",
    "concat",
    "matmul",
    "jacobian",
    "fd_jacobian",
]


def _ax(x):
    """Append a broadcast axis for the tangent dimension."""
    return x[..., None]


class Dual:
    """Value plus k partials, vectorized over leading array axes.

    ``val`` has shape ``S`` and ``der`` has shape ``S + (k,)``.
    """

    __slots__ = ("val", "der")
    __array_priority__ = 1000

    def __init__(self, val, der):
        self.val = val
        self.der = der

    # -- structure -----------------------------------------------------
    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return len(self.val.shape)

    @property
    def nder(self) -> int:
        return self.der.shape[-1]

    def __len__(self):
        return self.val.shape[0]

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if Ellipsis in idx:
            return Dual(self.val[idx], self.der[idx + (slice(None),)])
        return Dual(self.val[idx], self.der[idx + (Ellipsis, slice(None))])

    def sum(self, axis=None):
        if axis is None:
            axis = tuple(range(self.ndim))
        elif not isinstance(axis, tuple):
            axis = (axis,)
        axis = tuple(a % self.ndim for a in axis)
        return Dual(self.val.sum(axis=axis), self.der.sum(axis=axis))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.der.reshape(shape + (self.nder,)))

    def swapaxes(self, a, b):
        a %= self.ndim
        b %= self.ndim
        return Dual(self.val.swapaxes(a, b), self.der.swapaxes(a, b))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __repr__(self):
        return f"Dual(val={self.val!r}, der={self.der!r})"

    # -- arithmetic ----------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, _bsum(self.der, other.der))
        return Dual(self.val + other, _bcast_der(self.der, self.val + other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, _bsum(self.der, -other.der))
        return Dual(self.val - other, _bcast_der(self.der, self.val - other))

    def __rsub__(self, other):
        return Dual(other - self.val, _bcast_der(-self.der, other - self.val))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                _ax(self.val) * other.der + _ax(other.val) * self.der,
            )
        other = np.asarray(other) if not isinstance(other, (int, float)) else other
        return Dual(self.val * other, self.der * _ax_any(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            q = self.val * inv
            return Dual(q, (self.der - _ax(q) * other.der) * _ax(inv))
        other = np.asarray(other) if not isinstance(other, (int, float)) else other
        return Dual(self.val / other, self.der / _ax_any(other))

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        q = other * inv
        return Dual(q, -_ax(q * inv) * self.der)

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        if p == 2:
            return Dual(self.val * self.val, _ax(2.0 * self.val) * self.der)
        return Dual(self.val**p, _ax(p * self.val ** (p - 1)) * self.der)

    def __rpow__(self, base):
        return exp(self * np.log(base))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # comparisons act on the primal value
    def __lt__(self, other):
        return value(self) < value(other)

    def __le__(self, other):
        return value(self) <= value(other)

    def __gt__(self, other):
        return value(self) > value(other)

    def __ge__(self, other):
        return value(self) >= value(other)


def _ax_any(x):
    if isinstance(x, (int, float)):
        return x
    return x[..., None]


def _bsum(a, b):
    return a + b


def _bcast_der(der, val):
    """Broadcast ``der`` so its leading axes match ``val`` after a constant op."""
    vshape = val.shape
    if der.shape[:-1] == vshape:
        return der
    return _broadcast_to(der, vshape + (der.shape[-1],))


def _broadcast_to(x, shape):
    if isinstance(x, Dual):
        return Dual(_broadcast_to(x.val, shape), _broadcast_to(x.der, shape + (x.der.shape[-1],)))
    return np.broadcast_to(x, shape)


def value(x):
    """Strip every dual layer and return the plain numeric value."""
    while isinstance(x, Dual):
        x = x.val
    return x


def tangent(x, k: int):
    """Tangent array of ``x``; zeros when ``x`` is a constant."""
    if isinstance(x, Dual):
        return x.der
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape + (k,))


def clip(x, lo, hi):
    """Clamp to ``[lo, hi]``; the tangent is zeroed where the bound is active."""
    if isinstance(x, Dual):
        v = value(x)
        inside = ((v >= lo) & (v <= hi)).astype(float)
        return Dual(clip(x.val, lo, hi), x.der * inside[..., None])
    return np.clip(x, lo, hi)


def seed(x, directions=None):
    """Make a dual from ``x`` seeded on the components of its last axis.

    ``directions`` optionally selects which of the ``n`` components carry a
    unit tangent; the tangent size equals the number of seeded components.
    Leading axes are treated as a batch. When ``x`` is already a dual the
    result is a nested dual whose new tangent layer is the innermost
    differentiation (its entries are duals over the outer directions).
    """
    if not isinstance(x, Dual):
        x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if directions is None:
        directions = range(n)
    directions = list(directions)
    eye = np.zeros((n, len(directions)))
    eye[directions, range(len(directions))] = 1.0
    shape = tuple(x.shape) + (len(directions),)
    if isinstance(x, Dual):
        der = Dual(np.broadcast_to(eye, shape).copy(), np.zeros(shape + (x.nder,)))
        return Dual(x, der)
    return Dual(x, np.broadcast_to(eye, shape).copy())


# -- elementary functions ------------------------------------------------
def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.val), _ax(cos(x.val)) * x.der)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.val), -_ax(sin(x.val)) * x.der)
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.val)
        return Dual(e, _ax(e) * x.der)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.val), x.der / _ax(x.val))
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        r = sqrt(x.val)
        return Dual(r, x.der * _ax(0.5 / r))
    return np.sqrt(x)


def tanh(x):
    if isinstance(x, Dual):
        t = tanh(x.val)
        return Dual(t, _ax(1.0 - t * t) * x.der)
    return np.tanh(x)


def stack(items, axis=-1):
    """Stack scalars/arrays/duals along a new axis (negative axes count from the value end)."""
    if not any(isinstance(i, Dual) for i in items):
        return np.stack(np.broadcast_arrays(*items), axis=axis)
    ref = next(i for i in items if isinstance(i, Dual))
    shape = np.broadcast_shapes(*(np.shape(value(i)) for i in items))
    k = ref.nder
    vals, ders = [], []
    for i in items:
        if isinstance(i, Dual):
            vals.append(_broadcast_to(i.val, shape))
            ders.append(_broadcast_to(i.der, shape + (k,)))
        else:
            vals.append(_broadcast_to(np.asarray(i, dtype=float), shape))
            ders.append(_zeros_like_der(ref, shape + (k,)))
    dax = axis if axis >= 0 else axis - 1
    return Dual(_stack_any(vals, axis), _stack_any(ders, dax))


def concat(items, axis=-1):
    """Concatenate along an existing axis, broadcasting batch axes; mixes arrays and duals."""
    vals = [np.asarray(value(i)) for i in items]
    batch = np.broadcast_shapes(*(v.shape[:-1] for v in vals))
    if not any(isinstance(i, Dual) for i in items):
        return np.concatenate([np.broadcast_to(v, batch + v.shape[-1:]) for v in vals], axis=-1)
    ref = next(i for i in items if isinstance(i, Dual))
    k = ref.nder
    parts_v, parts_d = [], []
    for i, v in zip(items, vals):
        shape = batch + v.shape[-1:]
        if isinstance(i, Dual):
            parts_v.append(_broadcast_to(i.val, shape))
            parts_d.append(_broadcast_to(i.der, shape + (k,)))
        else:
            parts_v.append(_broadcast_to(np.asarray(i, dtype=float), shape))
            parts_d.append(_zeros_like_der(ref, shape + (k,)))
    return Dual(_concat_any(parts_v, -1), _concat_any(parts_d, -2))


def _concat_any(items, axis):
    if isinstance(items[0], Dual):
        return Dual(_concat_any([i.val for i in items], axis), _concat_any([i.der for i in items], axis - 1))
    return np.concatenate(items, axis=axis)


def _zeros_like_der(ref, shape):
    inner = ref.der
    if isinstance(inner, Dual):
        return Dual(np.zeros(shape), np.zeros(shape + (inner.nder,)))
    return np.zeros(shape)


def _stack_any(items, axis):
    if isinstance(items[0], Dual):
        dax = axis if axis >= 0 else axis - 1
        return Dual(_stack_any([i.val for i in items], axis), _stack_any([i.der for i in items], dax))
    return np.stack(items, axis=axis)


def matmul(a, b):
    """Batched matrix product for any mix of arrays and duals."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return a @ b
    return (a[..., :, :, None] * b[..., None, :, :]).sum(axis=-2)


# -- Jacobians -----------------------------------------------------------
def jacobian(f, x, mode: str = "dual"):
    """Jacobian of a vector function ``f`` at ``x``.

    ``mode="dual"`` seeds every input component and reads the tangents of
    the output (exact). ``mode="fd"`` uses central differences.
    """
    x = np.asarray(x, dtype=float)
    if mode == "fd":
        return fd_jacobian(f, x)
    if mode != "dual":
        raise ValueError(f"unknown mode {mode!r}")
    out = f(seed(x))
    if not isinstance(out, Dual):
        return np.zeros(np.shape(out) + (x.size,))
    return np.asarray(out.der, dtype=float)


def fd_jacobian(f, x, step=None):
    """Central finite differences with step ``cbrt(eps) * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    if step is None:
        step = np.cbrt(np.finfo(float).eps)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.empty(f0.shape + (x.size,))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[..., j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h)
    return jac
