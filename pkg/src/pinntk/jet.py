"""Truncated multivariate jets: tables of raw partial derivatives.

A :class:`Jet` stores ``D^alpha f`` (not Taylor coefficients) for every
multi-index in a downward-closed index set. Two index sets are used:

* total order ``<= k`` in ``d`` variables (a plain jet of ``f(x)``), and
* the product set ``{(alpha, beta): |alpha| <= k, |beta| <= k}`` in ``2d``
  variables (a bi-jet of ``f(x, x')``).

Both are closed under taking smaller indices, so the Leibniz rule and Taylor
composition truncate consistently. Tables carry arbitrary leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb, factorial
from typing import Callable, Sequence

import numpy as np

from .multiindex import MultiIndex, graded_indices

MAX_ORDER = 6

# f(y, n) -> array of shape (n + 1,) + y.shape holding f, f', ..., f^(n) at y.
DerivativeFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class JetLayout:
    dim: int
    order: int
    blocks: int = 1

    def __post_init__(self):
        if self.blocks not in (1, 2):
            raise ValueError("blocks must be 1 (jet) or 2 (bi-jet)")
        if not 0 <= self.order <= MAX_ORDER:
            raise ValueError(f"jet order must lie in [0, {MAX_ORDER}]")

    @cached_property
    def block_indices(self) -> tuple[MultiIndex, ...]:
        return graded_indices(self.dim, self.order)

    @cached_property
    def indices(self) -> tuple[MultiIndex, ...]:
        base = self.block_indices
        if self.blocks == 1:
            return base
        return tuple(MultiIndex(a + b) for a in base for b in base)

    @cached_property
    def position(self) -> dict[MultiIndex, int]:
        return {a: i for i, a in enumerate(self.indices)}

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def block_size(self) -> int:
        return len(self.block_indices)

    @property
    def nvars(self) -> int:
        return self.dim * self.blocks

    @property
    def max_total_order(self) -> int:
        return self.order * self.blocks

    @cached_property
    def _leibniz(self):
        return _leibniz_tables(self)

    @cached_property
    def total_orders(self) -> np.ndarray:
        return np.array([a.order for a in self.indices])


@lru_cache(maxsize=None)
def _leibniz_tables(layout: JetLayout):
    """Index triples for ``D^g(ab) = sum_{b<=g} C(g,b) D^b a D^{g-b} b``."""
    pos = layout.position
    left, right, coef, starts = [], [], [], []
    for gamma in layout.indices:
        starts.append(len(coef))
        for beta in np.ndindex(*(g + 1 for g in gamma)):
            rest = tuple(g - b for g, b in zip(gamma, beta))
            c = 1
            for g, b in zip(gamma, beta):
                c *= comb(g, b)
            left.append(pos[MultiIndex(beta)])
            right.append(pos[MultiIndex(rest)])
            coef.append(float(c))
    return (np.array(left), np.array(right), np.array(coef), np.array(starts))


def _product_table(layout: JetLayout, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    left, right, coef, starts = layout._leibniz
    terms = a[..., left] * b[..., right]
    terms *= coef
    return np.add.reduceat(terms, starts, axis=-1)


def _product_adjoint(layout: JetLayout, a: np.ndarray, out_bar: np.ndarray) -> np.ndarray:
    """Adjoint of ``b -> a * b`` applied to ``out_bar``."""
    left, right, coef, starts = layout._leibniz
    counts = np.diff(np.append(starts, len(coef)))
    out_idx = np.repeat(np.arange(layout.size), counts)
    contrib = a[..., left] * out_bar[..., out_idx] * coef
    # scatter-add onto the ``right`` slots
    order = np.argsort(right, kind="stable")
    r_sorted = right[order]
    r_starts = np.flatnonzero(np.r_[True, r_sorted[1:] != r_sorted[:-1]])
    summed = np.add.reduceat(contrib[..., order], r_starts, axis=-1)
    res = np.zeros(contrib.shape[:-1] + (layout.size,))
    res[..., r_sorted[r_starts]] = summed
    return res


class Jet:
    """Batched table of partial derivatives on a :class:`JetLayout`."""

    __slots__ = ("layout", "table")

    def __init__(self, layout: JetLayout, table):
        table = np.asarray(table, dtype=float)
        if table.shape[-1:] != (layout.size,):
            raise ValueError(f"table length {table.shape[-1:]} != layout size {layout.size}")
        self.layout = layout
        self.table = table

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def order(self) -> int:
        return self.layout.order

    @property
    def shape(self) -> tuple[int, ...]:
        return self.table.shape[:-1]

    @property
    def value(self) -> np.ndarray:
        return self.table[..., 0]

    def __getitem__(self, alpha) -> np.ndarray:
        return self.table[..., self.layout.position[MultiIndex(alpha)]]

    def entry(self, alpha, beta) -> np.ndarray:
        """Bi-jet entry ``D_x^alpha D_{x'}^beta``."""
        if self.layout.blocks != 2:
            raise TypeError("entry(alpha, beta) needs a bi-jet")
        return self[tuple(alpha) + tuple(beta)]

    def block_matrix(self) -> np.ndarray:
        """Bi-jet table reshaped to (..., N, N) with rows alpha, columns beta."""
        n = self.layout.block_size
        return self.table.reshape(self.shape + (n, n))

    def _check(self, other: "Jet"):
        if other.layout != self.layout:
            raise ValueError(f"jet layout mismatch: {self.layout} vs {other.layout}")

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return Jet(self.layout, self.table + other.table)
        t = self.table.copy()
        t[..., 0] += other
        return Jet(self.layout, t)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.layout, -self.table)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_product(self, other)
        return Jet(self.layout, self.table * np.asarray(other)[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_product(self, reciprocal(other))
        return Jet(self.layout, self.table / np.asarray(other)[..., None])

    def __repr__(self):
        return f"Jet(dim={self.dim}, order={self.order}, blocks={self.layout.blocks}, shape={self.shape})"


def constant_jet(layout: JetLayout, value) -> Jet:
    value = np.asarray(value, dtype=float)
    t = np.zeros(value.shape + (layout.size,))
    t[..., 0] = value
    return Jet(layout, t)


def variable_jet(layout: JetLayout, value, var: int) -> Jet:
    """Jet of the coordinate function ``y -> y_var`` evaluated at ``value``."""
    if not 0 <= var < layout.nvars:
        raise ValueError(f"variable index {var} outside [0, {layout.nvars})")
    jet = constant_jet(layout, value)
    if layout.order > 0:
        e = [0] * layout.nvars
        e[var] = 1
        jet.table[..., layout.position[MultiIndex(e)]] = 1.0
    return jet


def seed_coordinate_jet(x, i: int, k: int) -> Jet:
    """Jet of ``x -> x_i`` at point ``x``."""
    x = np.asarray(x, dtype=float)
    layout = JetLayout(x.shape[-1], k)
    return variable_jet(layout, x[..., i], i)


def jet_linear_combine(jets: Sequence[Jet], weights: Sequence[float]) -> Jet:
    if len(jets) != len(weights):
        raise ValueError("need one weight per jet")
    if not jets:
        raise ValueError("empty combination has no layout")
    layout = jets[0].layout
    out = np.zeros(jets[0].table.shape)
    for j, w in zip(jets, weights):
        if j.layout != layout:
            raise ValueError("jet layout mismatch")
        out = out + w * j.table
    return Jet(layout, out)


def jet_product(a: Jet, b: Jet) -> Jet:
    a._check(b)
    return Jet(a.layout, _product_table(a.layout, a.table, b.table))


def taylor_powers(inner: Jet, limit: int | None = None) -> list[np.ndarray]:
    """Tables of ``h^j / j!`` for ``h = inner - inner.value``, j = 1, 2, ...

    Stops at the first power that is identically zero (structurally or because
    the layout truncates it).
    """
    layout = inner.layout
    h = inner.table.copy()
    h[..., 0] = 0.0
    limit = layout.max_total_order if limit is None else limit
    powers = []
    p = h
    for j in range(1, limit + 1):
        if not np.any(p):
            break
        powers.append(p)
        if j < limit:
            p = _product_table(layout, p, h) / (j + 1)
    return powers


def compose_with_powers(derivs: np.ndarray, powers: list[np.ndarray], size: int) -> np.ndarray:
    """``sum_j f^(j)(y0) h^j / j!`` from precomputed powers."""
    out = np.zeros(derivs.shape[1:] + (size,))
    out[..., 0] = derivs[0]
    for j, p in enumerate(powers, start=1):
        out += derivs[j][..., None] * p
    return out


def jet_compose_scalar(f: DerivativeFn, inner: Jet) -> Jet:
    """Jet of ``f(inner)`` (exact Faa di Bruno via truncated Taylor composition).

    ``f(y, n)`` must return ``f, f', ..., f^(n)`` stacked on a new leading axis
    and raise ``ValueError`` if it cannot supply ``n`` derivatives.
    """
    powers = taylor_powers(inner)
    derivs = np.asarray(f(inner.value, len(powers)))
    return Jet(inner.layout, compose_with_powers(derivs, powers, inner.layout.size))


def _sqrt_derivs(y, n):
    y = np.asarray(y, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    c = 1.0
    for j in range(n + 1):
        out[j] = c * y ** (0.5 - j)
        c *= 0.5 - j
    return out


def _recip_derivs(y, n):
    y = np.asarray(y, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    for j in range(n + 1):
        out[j] = (-1) ** j * factorial(j) * y ** (-1.0 - j)
    return out


def sqrt(jet: Jet) -> Jet:
    return jet_compose_scalar(_sqrt_derivs, jet)


def reciprocal(jet: Jet) -> Jet:
    return jet_compose_scalar(_recip_derivs, jet)


def dot_jets(xs: Sequence[Jet], ys: Sequence[Jet]) -> Jet:
    """``sum_i xs[i] * ys[i]``."""
    out = jet_product(xs[0], ys[0])
    for a, b in zip(xs[1:], ys[1:]):
        out = out + jet_product(a, b)
    return out


def bijet_inputs(x, xp, k: int) -> tuple[list[Jet], list[Jet]]:
    """Coordinate bi-jets of ``x`` (variables 0..d-1) and ``x'`` (d..2d-1)."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape[-1] != xp.shape[-1]:
        raise ValueError("x and x' must have the same dimension")
    x, xp = np.broadcast_arrays(x, xp)
    d = x.shape[-1]
    layout = JetLayout(d, k, blocks=2)
    xs = [variable_jet(layout, x[..., i], i) for i in range(d)]
    xps = [variable_jet(layout, xp[..., i], d + i) for i in range(d)]
    return xs, xps
