"""Activation functions with derivative families."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

MAX_DERIVATIVE = 16


@lru_cache(maxsize=None)
def _tanh_polys(n: int) -> tuple[Polynomial, ...]:
    # d/dy P(tanh y) = P'(t) (1 - t^2)
    polys = [Polynomial([0.0, 1.0])]
    one_minus_t2 = Polynomial([1.0, 0.0, -1.0])
    for _ in range(n):
        polys.append(polys[-1].deriv() * one_minus_t2)
    return tuple(polys)


def _tanh(y, n):
    t = np.tanh(y)
    return np.stack([p(t) for p in _tanh_polys(n)])


def _sin(y, n):
    base = [np.sin(y), np.cos(y), -np.sin(y), -np.cos(y)]
    return np.stack([base[j % 4] for j in range(n + 1)])


def _identity(y, n):
    y = np.asarray(y, dtype=float)
    out = np.zeros((n + 1,) + y.shape)
    out[0] = y
    if n >= 1:
        out[1] = 1.0
    return out


def _relu_power(p: int):
    def f(y, n):
        y = np.asarray(y, dtype=float)
        pos = np.maximum(y, 0.0)
        out = np.zeros((n + 1,) + y.shape)
        for j in range(min(n, p) + 1):
            c = factorial(p) / factorial(p - j)
            # right-continuous at 0: 0**0 -> 1 only for y > 0
            out[j] = c * (pos ** (p - j) if j < p else (y > 0).astype(float))
        return out

    return f


@dataclass(frozen=True)
class Activation:
    """A scalar activation and its derivatives.

    ``smoothness`` is the largest ``k`` with the activation in ``C^k``
    (``None`` for smooth ones). ``max_derivative`` is how many derivatives can
    be evaluated at all; for ReLU^p the ``p``-th derivative is the
    right-continuous step. ``growth`` lists the polynomial growth exponents
    ``l_j`` bounding ``|sigma^(j)(y)| <= C (1 + |y|^{l_j})``. ``homogeneous``
    is the degree ``p`` when ``sigma(y) = max(y, 0)^p``.
    """

    name: str
    fn: Callable[[np.ndarray, int], np.ndarray]
    smoothness: int | None
    max_derivative: int
    growth: tuple[float, ...]
    homogeneous: int | None = None

    def __call__(self, y):
        return self.derivatives(y, 0)[0]

    def derivatives(self, y, n: int) -> np.ndarray:
        if n > self.max_derivative:
            raise ValueError(
                f"activation {self.name!r} provides derivatives up to order "
                f"{self.max_derivative}, requested {n}"
            )
        return self.fn(np.asarray(y, dtype=float), n)

    def shifted(self, s: int) -> Callable[[np.ndarray, int], np.ndarray]:
        """Derivative function of ``sigma^(s)``."""
        return lambda y, n: self.derivatives(y, n + s)[s:]

    def supports(self, k: int) -> bool:
        """Whether the activation is in ``C^k`` (the growth bounds always hold)."""
        return self.smoothness is None or k <= self.smoothness


def relu_power(p: int) -> Activation:
    if not 1 <= p <= 6:
        raise ValueError("ReLU^p is shipped for p in 1..6")
    growth = tuple(max(float(p - j), 1.0) for j in range(1, p + 1))
    return Activation(f"relu{p}", _relu_power(p), p - 1, p, growth, homogeneous=p)


ACTIVATIONS: dict[str, Activation] = {
    "tanh": Activation("tanh", _tanh, None, MAX_DERIVATIVE, (1.0,) * MAX_DERIVATIVE),
    "sin": Activation("sin", _sin, None, MAX_DERIVATIVE, (1.0,) * MAX_DERIVATIVE),
    "identity": Activation("identity", _identity, None, MAX_DERIVATIVE, (1.0,) * MAX_DERIVATIVE),
}
for _p in range(1, 7):
    ACTIVATIONS[f"relu{_p}"] = relu_power(_p)
ACTIVATIONS["relu"] = ACTIVATIONS["relu1"]


def get_activation(name: str | Activation) -> Activation:
    if isinstance(name, Activation):
        return name
    try:
        return ACTIVATIONS[name.lower().replace("^", "")]
    except KeyError:
        raise KeyError(f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}") from None
