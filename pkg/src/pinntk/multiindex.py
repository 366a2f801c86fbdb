"""Multi-indices and linear differential operators with (possibly variable) coefficients."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class MultiIndex(tuple):
    """Tuple of non-negative integers, one per input coordinate."""

    def __new__(cls, entries: Sequence[int]):
        entries = tuple(int(e) for e in entries)
        if any(e < 0 for e in entries):
            raise ValueError(f"multi-index entries must be non-negative: {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return sum(self)

    def __repr__(self) -> str:
        return f"MultiIndex({tuple(self)})"


def total_order(alpha: Sequence[int]) -> int:
    return sum(MultiIndex(alpha))


@lru_cache(maxsize=None)
def graded_indices(dim: int, order: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of length ``dim`` with total order <= ``order``.

    Graded lexicographic: by total order, then descending lexicographic within a
    grade, so in 2D the grade-1 block is ``(1, 0), (0, 1)``.
    """
    out = []
    for t in range(order + 1):
        grade = [a for a in itertools.product(range(t, -1, -1), repeat=dim) if sum(a) == t]
        out.extend(MultiIndex(a) for a in grade)
    return tuple(out)


def zero_index(dim: int) -> MultiIndex:
    return MultiIndex((0,) * dim)


def unit_index(dim: int, i: int, power: int = 1) -> MultiIndex:
    e = [0] * dim
    e[i] = power
    return MultiIndex(e)


@dataclass(frozen=True)
class Term:
    coeff: Coefficient
    index: MultiIndex

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Coefficient value at points ``x`` of shape (..., d); returns shape (...)."""
        if callable(self.coeff):
            return np.broadcast_to(np.asarray(self.coeff(x), dtype=float), x.shape[:-1])
        return np.full(x.shape[:-1], float(self.coeff))


@dataclass(frozen=True)
class DiffOperator:
    """``T = sum_r a_r D^{alpha_r}``.

    Coefficients are constants or callables mapping points of shape (..., d) to
    values of shape (...).
    """

    dim: int
    terms: tuple[Term, ...] = field(default_factory=tuple)
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("operator dimension must be positive")
        for t in self.terms:
            if len(t.index) != self.dim:
                raise ValueError(
                    f"term index {tuple(t.index)} has length {len(t.index)}, expected {self.dim}"
                )

    @classmethod
    def from_terms(cls, dim: int, terms, name: str = "") -> "DiffOperator":
        return cls(dim, tuple(Term(c, MultiIndex(a)) for c, a in terms), name)

    @classmethod
    def identity(cls, dim: int) -> "DiffOperator":
        return cls.from_terms(dim, [(1.0, zero_index(dim))], "id")

    @classmethod
    def zero(cls, dim: int) -> "DiffOperator":
        return cls(dim, (), "zero")

    @property
    def order(self) -> int:
        return max((t.index.order for t in self.terms), default=0)

    @property
    def is_constant(self) -> bool:
        return not any(callable(t.coeff) for t in self.terms)

    def __add__(self, other: "DiffOperator") -> "DiffOperator":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return DiffOperator(self.dim, self.terms + other.terms, f"{self.name}+{other.name}")

    def scale(self, c: float) -> "DiffOperator":
        terms = []
        for t in self.terms:
            if callable(t.coeff):
                f = t.coeff
                terms.append(Term(lambda x, f=f: c * np.asarray(f(x)), t.index))
            else:
                terms.append(Term(c * float(t.coeff), t.index))
        return DiffOperator(self.dim, tuple(terms), self.name)

    def coefficient_vector(self, x: np.ndarray, order: int) -> np.ndarray:
        """Coefficients laid out against ``graded_indices(dim, order)``.

        ``x`` has shape (..., d); the result has shape (..., N) so that
        ``table @ c`` (row-wise) applies the operator to a jet table.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} != operator dimension {self.dim}")
        if self.order > order:
            raise ValueError(f"operator order {self.order} exceeds jet order {order}")
        layout = graded_indices(self.dim, order)
        pos = {a: i for i, a in enumerate(layout)}
        c = np.zeros(x.shape[:-1] + (len(layout),))
        for t in self.terms:
            c[..., pos[t.index]] += t.evaluate(x)
        return c

    def to_records(self) -> list[dict]:
        if not self.is_constant:
            raise ValueError("only constant-coefficient operators are serializable")
        return [{"coeff": float(t.coeff), "index": list(t.index)} for t in self.terms]

    @classmethod
    def from_records(cls, dim: int, records: list[dict], name: str = "") -> "DiffOperator":
        return cls.from_terms(dim, [(float(r["coeff"]), r["index"]) for r in records], name)


def apply_operator(op: DiffOperator, jet, x) -> np.ndarray:
    """``T u`` at ``x`` from the derivative table of ``u``.

    ``jet`` is a :class:`pinntk.jet.Jet` whose batch shape matches the leading
    shape of ``x``.
    """
    if jet.dim != op.dim:
        raise ValueError(f"jet dimension {jet.dim} != operator dimension {op.dim}")
    if op.order > jet.order:
        raise ValueError(f"jet order {jet.order} too shallow for operator of order {op.order}")
    x = np.asarray(x, dtype=float)
    c = op.coefficient_vector(x, jet.order)
    return np.sum(jet.table * c, axis=-1)


def _laplacian_terms(dim: int, coeff: float = 1.0):
    return [(coeff, unit_index(dim, i, 2)) for i in range(dim)]


def _bilaplacian_terms(dim: int):
    terms = []
    for i in range(dim):
        for j in range(dim):
            a = [0] * dim
            a[i] += 2
            a[j] += 2
            terms.append((1.0, a))
    return terms


PRESETS = ("id", "laplacian", "bilaplacian", "dxx", "dxxxx", "wave2d", "id+laplacian", "neg_dxx")


def preset(name: str, dim: int) -> DiffOperator:
    """Named operators used by the experiments."""
    if name == "id":
        return DiffOperator.identity(dim)
    if name == "laplacian":
        return DiffOperator.from_terms(dim, _laplacian_terms(dim), name)
    if name == "bilaplacian":
        return DiffOperator.from_terms(dim, _bilaplacian_terms(dim), name)
    if name == "dxx":
        return DiffOperator.from_terms(dim, [(1.0, unit_index(dim, 0, 2))], name)
    if name == "neg_dxx":
        return DiffOperator.from_terms(dim, [(-1.0, unit_index(dim, 0, 2))], name)
    if name == "dxxxx":
        return DiffOperator.from_terms(dim, [(1.0, unit_index(dim, 0, 4))], name)
    if name == "wave2d":
        if dim != 2:
            raise ValueError("wave2d is defined for d=2 only")
        return DiffOperator.from_terms(dim, [(1.0, (2, 0)), (-1.0, (0, 2))], name)
    if name == "id+laplacian":
        return DiffOperator.from_terms(
            dim, [(1.0, zero_index(dim))] + _laplacian_terms(dim), name
        )
    raise KeyError(f"unknown operator preset {name!r}")


def resolve_operator(spec, dim: int) -> DiffOperator:
    """Preset name or list of ``{coeff, index}`` records."""
    if isinstance(spec, str):
        return preset(spec, dim)
    if isinstance(spec, DiffOperator):
        return spec
    return DiffOperator.from_records(dim, list(spec), name="custom")
