"""Gram spectra, eigenvalue decay and Nystrom discretization of integral operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_DENSE = 2000


class SpectrumError(ValueError):
    pass


def _check_symmetric(M: np.ndarray, tol: float = 1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SpectrumError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > MAX_DENSE:
        raise SpectrumError(f"dense eigensolver capped at n={MAX_DENSE}")
    scale = np.max(np.abs(M)) if M.size else 0.0
    if np.max(np.abs(M - M.T), initial=0.0) > tol * max(scale, 1e-300):
        raise SpectrumError("matrix is not symmetric")
    return M


def sym_eigvals(M) -> np.ndarray:
    """Full spectrum of a symmetric matrix, descending."""
    M = _check_symmetric(M)
    return np.linalg.eigvalsh(0.5 * (M + M.T))[::-1]


@dataclass
class GramSpectrum:
    matrix: np.ndarray
    label: dict = field(default_factory=dict)
    eigenvalues: np.ndarray = field(init=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = _check_symmetric(self.matrix)
        lam, Q = np.linalg.eigh(0.5 * (M + M.T))
        self.eigenvalues = lam[::-1]
        self.eigenvectors = Q[:, ::-1]

    def reconstruction_error(self) -> float:
        Q, lam = self.eigenvectors, self.eigenvalues
        R = (Q * lam) @ Q.T - self.matrix
        return float(np.linalg.norm(R) / max(np.linalg.norm(self.matrix), 1e-300))


def normalize_spectra(spectra: Sequence[Sequence[float]]) -> list[np.ndarray]:
    """Scale each spectrum so its leading eigenvalue is 1."""
    out = []
    for s in spectra:
        s = np.asarray(s, dtype=float)
        if s.size == 0 or not s[0] > 0:
            raise SpectrumError("each spectrum needs a positive leading eigenvalue")
        out.append(s / s[0])
    return out


def decay_index(eigs: Sequence[float], threshold: float) -> int:
    """1-based index of the first eigenvalue below ``threshold``; ``n + 1`` if none."""
    eigs = np.asarray(eigs, dtype=float)
    below = np.flatnonzero(eigs < threshold)
    return int(below[0]) + 1 if below.size else len(eigs) + 1


@dataclass
class NystromProblem:
    """Quadrature discretization of ``f -> int K(., y) f(y) dy``.

    ``kernel`` maps two point arrays of shape (n, d) to the (n, n) matrix.
    """

    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    points: np.ndarray
    weights: np.ndarray
    volume: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise SpectrumError("quadrature weights must be positive")
        if self.volume is not None and not np.isclose(self.weights.sum(), self.volume, rtol=1e-10):
            raise SpectrumError("quadrature weights must sum to the domain volume")

    @classmethod
    def midpoint(cls, kernel, n: int, low: float = 0.0, high: float = 1.0) -> "NystromProblem":
        """Uniform midpoint grid on an interval."""
        h = (high - low) / n
        x = low + h * (np.arange(n) + 0.5)
        return cls(kernel, x[:, None], np.full(n, h), high - low)

    def matrix(self) -> np.ndarray:
        K = np.asarray(self.kernel(self.points, self.points), dtype=float)
        s = np.sqrt(self.weights)
        return s[:, None] * K * s[None, :]


def nystrom_eigs(problem: NystromProblem) -> np.ndarray:
    """Eigenvalues of ``sqrt(w_i) K(x_i, x_j) sqrt(w_j)``, descending."""
    return sym_eigvals(problem.matrix())


@dataclass
class RatioCheck:
    passed: bool
    max_ratio: float
    bound: float
    ratios: np.ndarray


def ratio_bound_check(lam, mu, c_t: float, slack: float = 0.0, count: int | None = None) -> RatioCheck:
    """Whether ``max_{j <= J} lam_j / mu_j <= c_t^2 (1 + slack)``."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    J = min(len(lam), len(mu)) if count is None else count
    if J > min(len(lam), len(mu)):
        raise SpectrumError(f"spectra shorter than the tested index {J}")
    lam, mu = lam[:J], mu[:J]
    if np.any(mu <= 0):
        j = int(np.flatnonzero(mu <= 0)[0]) + 1
        raise SpectrumError(f"mu_{j} = {mu[j - 1]:.3e} is not positive")
    ratios = lam / mu
    bound = c_t**2 * (1.0 + slack)
    mr = float(ratios.max())
    return RatioCheck(mr <= bound, mr, bound, ratios)


def svg_line_chart(
    series: dict[str, Sequence[float]],
    title: str = "",
    log_y: bool = True,
    width: int = 640,
    height: int = 420,
    floor: float = 1e-18,
) -> str:
    """Minimal SVG line chart (index on x, value on y)."""
    pad_l, pad_r, pad_t, pad_b = 70, 150, 30, 40
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    ys_all = []
    for v in series.values():
        v = np.asarray(v, dtype=float)
        ys_all.append(np.log10(np.maximum(np.abs(v), floor)) if log_y else v)
    lo = min(float(y.min()) for y in ys_all)
    hi = max(float(y.max()) for y in ys_all)
    if hi == lo:
        hi = lo + 1.0
    nmax = max(len(y) for y in ys_all)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for t in np.linspace(lo, hi, 5):
        y = pad_t + ph * (1 - (t - lo) / (hi - lo))
        label = f"1e{t:.0f}" if log_y else f"{t:.3g}"
        parts.append(f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{label}</text>')
    for i, (name, y) in enumerate(zip(series, ys_all)):
        xs = pad_l + pw * np.arange(len(y)) / max(nmax - 1, 1)
        yy = pad_t + ph * (1 - (y - lo) / (hi - lo))
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, yy))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        ly = pad_t + 16 * (i + 1)
        parts.append(f'<text x="{pad_l + pw + 10}" y="{ly}" font-size="12" fill="{c}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
