"""Infinite-width random-feature and neural tangent kernels with exact input derivatives.

The layer recurrence needs ``E[sigma^(i)(u) sigma^(j)(v)]`` for
``(u, v) ~ N(0, B)``. With ``a = sqrt(B11)``, ``b = sqrt(B22)``,
``rho = B12 / (a b)`` we write ``u = a xi`` and
``v = b rho xi + b sqrt(1 - rho^2) eta`` with independent standard normals and
integrate with tensorized Gauss-Hermite rules.

Input derivatives are carried by running that quadrature sum on bi-jets. Since
``u - u0 = xi (a - a0)`` and ``v - v0 = xi (p - p0) + eta (q - q0)`` with
``p = b rho`` and ``q = b sqrt(1 - rho^2)``, the Taylor composition of each
node's integrand factors into scalar node sums times jet products that do not
depend on the node. The two are summed in that order, which is the same
arithmetic as composing at every node, at a fraction of the cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial, gamma
import numpy as np

from .activations import Activation, get_activation
from .jet import Jet, JetLayout, bijet_inputs, constant_jet, dot_jets, reciprocal, sqrt
from .jet import _product_table
from .multiindex import DiffOperator

DEFAULT_NODES = 128
MIN_NODES = 20
VARIANCE_FLOOR = 1e-30
# 1 - rho^2 below this is treated as the boundary of the PSD cone
SINGULAR_TOL = 1e-10
POLAR_NODES = 48


@dataclass(frozen=True)
class KernelSpec:
    depth: int
    activation: str = "tanh"
    order: int = 0
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth L must be a positive integer")
        if self.nodes < MIN_NODES:
            raise ValueError(f"quadrature needs at least {MIN_NODES} nodes per axis")
        act = get_activation(self.activation)
        # the recurrence composes sigma' with derivative order k
        if self.order + 1 > act.max_derivative:
            raise ValueError(
                f"activation {act.name} cannot support kernel derivatives of order {self.order}"
            )

    @property
    def act(self) -> Activation:
        return get_activation(self.activation)


@dataclass(frozen=True)
class CovBlock:
    a11: float
    a12: float
    a22: float

    def check(self, tol: float = 1e-12):
        scale = max(abs(self.a11), abs(self.a22), 1e-300)
        if self.a11 < -tol * scale or self.a22 < -tol * scale:
            raise ValueError(f"covariance block has negative variance: {self}")
        if self.a12**2 > max(self.a11, 0) * max(self.a22, 0) + tol * scale**2:
            raise ValueError(f"covariance block is not positive semi-definite: {self}")


@lru_cache(maxsize=None)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E f(xi)``, ``xi ~ N(0, 1)``."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def _ab_rho(a11, a12, a22):
    a = np.sqrt(np.maximum(a11, VARIANCE_FLOOR))
    b = np.sqrt(np.maximum(a22, VARIANCE_FLOOR))
    rho = np.clip(a12 / (a * b), -1.0, 1.0)
    return a, b, rho


def gauss_pair_expectation(fi: int, fj: int, B: CovBlock, spec: KernelSpec) -> float:
    """``E[sigma^(fi)(u) sigma^(fj)(v)]`` for ``(u, v) ~ N(0, B)``."""
    B.check()
    act = spec.act
    if max(fi, fj) > spec.order + 1:
        raise ValueError(f"derivative order {max(fi, fj)} exceeds kernel order {spec.order} + 1")
    return float(
        pair_expectations(act, fi, fj, np.array(B.a11), np.array(B.a12), np.array(B.a22), spec.nodes)
    )


def pair_expectations(act: Activation, fi: int, fj: int, a11, a12, a22, nodes: int) -> np.ndarray:
    """Vectorized ``E[sigma^(fi)(u) sigma^(fj)(v)]`` over arrays of covariance entries.

    A zero variance collapses its axis to the point mass at 0; ``rho = +-1``
    collapses the eta-axis.
    """
    xi, w = gauss_hermite(nodes)
    a11, a12, a22 = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (a11, a12, a22)))
    shape = a11.shape
    a = np.sqrt(np.maximum(a11, 0.0)).ravel()
    b = np.sqrt(np.maximum(a22, 0.0)).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where((a > 0) & (b > 0), a12.ravel() / (a * b), 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    s = np.sqrt(1.0 - rho**2)
    out = np.empty(a.shape)
    if act.homogeneous is not None:
        live = (a > 0) & (b > 0)
        out[live] = _polar_pair(act.homogeneous, fi, fj, a[live], b[live], rho[live])
        done = live
    else:
        done = np.zeros(a.shape, dtype=bool)
    flat = (s <= np.sqrt(SINGULAR_TOL)) & ~done
    if np.any(flat):
        fu = act.derivatives(a[flat, None] * xi, fi)[fi]
        fv = act.derivatives((b * rho)[flat, None] * xi, fj)[fj]
        out[flat] = (fu * fv) @ w
    rest = np.flatnonzero(~flat & ~done)
    step = max(1, 2_000_000 // nodes**2)
    for start in range(0, len(rest), step):
        idx = rest[start:start + step]
        u = a[idx, None] * xi
        v = (b * rho)[idx, None, None] * xi[:, None] + (b * s)[idx, None, None] * xi[None, :]
        fu = act.derivatives(u, fi)[fi]
        fv = act.derivatives(v, fj)[fj]
        out[idx] = (w * fu * (fv @ w)).sum(axis=-1)
    return out.reshape(shape)


def _polar_pair(p: int, fi: int, fj: int, a, b, rho) -> np.ndarray:
    """``E[sigma^(fi)(u) sigma^(fj)(v)]`` for ``sigma = max(y, 0)^p``.

    In polar coordinates ``(xi, eta) = R (cos t, sin t)`` the integrand splits
    into a Rayleigh moment of ``R`` times a smooth integral over the arc where
    ``u`` and ``v`` are both positive. The arc is integrated by Gauss-Legendre,
    so the kinks of ``sigma`` never sit inside a quadrature cell.
    """
    if fi > p or fj > p:
        return np.zeros(np.shape(a))
    ri, rj = p - fi, p - fj
    c = factorial(p) / factorial(ri) * factorial(p) / factorial(rj)
    phi = np.arccos(rho)
    t, w = np.polynomial.legendre.leggauss(POLAR_NODES)
    half = (np.pi - phi) / 2.0
    theta = phi[:, None] / 2.0 + half[:, None] * t
    f = np.maximum(np.cos(theta), 0.0) ** ri * np.maximum(np.cos(theta - phi[:, None]), 0.0) ** rj
    arc = half * (f @ w)
    m = ri + rj
    moment = 2.0 ** (m / 2.0) * gamma(m / 2.0 + 1.0)
    return c * a**ri * b**rj * moment * arc / (2.0 * np.pi)


def self_expectations(act: Activation, fi: int, a11, nodes: int) -> np.ndarray:
    """``E[sigma^(fi)(u)^2]`` for ``u ~ N(0, a11)``."""
    xi, w = gauss_hermite(nodes)
    a = np.sqrt(np.maximum(np.asarray(a11, dtype=float), 0.0))
    f = act.derivatives(a[..., None] * xi, fi)[fi]
    return np.sum(w * f * f, axis=-1)


def rf_nt_kernels(spec: KernelSpec, x, xp) -> tuple[np.ndarray, np.ndarray]:
    """Ladders ``K^RF_l(x, x')`` and ``K^NT_l(x, x')`` for ``l = 1..L+1``.

    Inputs of shape (..., d) are broadcast; each output has shape (L+1, ...).
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape[-1] != xp.shape[-1]:
        raise ValueError("x and x' must have the same dimension")
    act = spec.act
    s11 = np.sum(x * x, axis=-1)
    s22 = np.sum(xp * xp, axis=-1)
    s12 = np.sum(x * xp, axis=-1)
    s11, s12, s22 = np.broadcast_arrays(s11, s12, s22)
    rf, nt = [s12], [s12]
    for _ in range(spec.depth):
        e0 = pair_expectations(act, 0, 0, s11, s12, s22, spec.nodes)
        e1 = pair_expectations(act, 1, 1, s11, s12, s22, spec.nodes)
        nt.append(e0 + nt[-1] * e1)
        rf.append(e0)
        s11, s22 = (self_expectations(act, 0, s11, spec.nodes), self_expectations(act, 0, s22, spec.nodes))
        s12 = e0
    return np.stack(rf), np.stack(nt)


def rho_ladder(spec: KernelSpec, x, xp) -> np.ndarray:
    """Correlation of ``B_l(x, x')`` for each layer l = 1..L, shape (L, ...)."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    act = spec.act
    s11 = np.sum(x * x, axis=-1)
    s22 = np.sum(xp * xp, axis=-1)
    s12 = np.sum(x * xp, axis=-1)
    s11, s12, s22 = np.broadcast_arrays(s11, s12, s22)
    out = []
    for _ in range(spec.depth):
        out.append(_ab_rho(s11, s12, s22)[2])
        e0 = pair_expectations(act, 0, 0, s11, s12, s22, spec.nodes)
        s11, s22 = self_expectations(act, 0, s11, spec.nodes), self_expectations(act, 0, s22, spec.nodes)
        s12 = e0
    return np.stack(out)


# ---------------------------------------------------------------------------
# jet-valued quadrature
# ---------------------------------------------------------------------------


def _scaled_powers(layout: JetLayout, dev: np.ndarray, limit: int) -> list[np.ndarray]:
    """Tables of ``dev^j / j!`` for j = 0..; ``dev`` has zero constant term."""
    one = np.zeros(dev.shape)
    one[..., 0] = 1.0
    out = [one]
    p = dev
    for j in range(1, limit + 1):
        if not np.any(p):
            break
        out.append(p)
        p = _product_table(layout, p, dev) / (j + 1)
    return out


def _deviation(jet: Jet) -> np.ndarray:
    t = jet.table.copy()
    t[..., 0] = 0.0
    return t


def _jet_expectation(act, fi, fj, a: Jet, p: Jet, q: Jet | None, nodes: int) -> Jet:
    """Bi-jet of ``E[sigma^(fi)(a xi) sigma^(fj)(p xi + q eta)]``.

    ``q=None`` means the eta-term vanishes identically (collapsed axis).
    """
    layout = a.layout
    K = layout.max_total_order
    xi, w = gauss_hermite(nodes)

    Pa = _scaled_powers(layout, _deviation(a), K)
    Pp = _scaled_powers(layout, _deviation(p), K)
    Pq = _scaled_powers(layout, _deviation(q), K) if q is not None else Pa[:1]
    J, I, Lq = len(Pa) - 1, len(Pp) - 1, len(Pq) - 1

    a0 = a.value[..., None]
    p0 = p.value[..., None]
    # sigma^(fi + j)(a0 xi) xi^j, shape (..., n, J+1)
    du = act.derivatives(a0 * xi, fi + J)[fi:]
    du = np.moveaxis(du, 0, -1) * (xi[:, None] ** np.arange(J + 1))
    R = I + Lq
    if q is None:
        dv = act.derivatives(p0 * xi, fj + R)[fj:]  # (R+1, ..., n)
        G = np.moveaxis(dv, 0, -1)[..., None]  # (..., n, R+1, 1)
    else:
        q0 = q.value[..., None, None]
        v0 = p0[..., None] * xi[:, None] + q0 * xi[None, :]  # (..., n_xi, n_eta)
        dv = act.derivatives(v0, fj + R)[fj:]  # (R+1, ..., n_xi, n_eta)
        eta_pows = xi[:, None] ** np.arange(Lq + 1)  # (n_eta, Lq+1)
        G = np.einsum("r...xy,y,yl->...xrl", dv, w, eta_pows)
    xi_pows = xi[:, None] ** np.arange(I + 1)  # (n, I+1)

    out = np.zeros(a.table.shape)
    for j in range(J + 1):
        for i in range(I + 1):
            for l in range(Lq + 1):
                if j + i + l > K:
                    continue
                # coefficient: sum_xi w A_j xi^i G[i + l, l]
                c = np.einsum("...x,x,x,...x->...", du[..., j], w, xi_pows[:, i], G[..., i + l, l])
                term = Pp[i] if l == 0 else _product_table(layout, Pp[i], Pq[l])
                if j > 0:
                    term = _product_table(layout, Pa[j], term)
                out += c[..., None] * term
    return Jet(layout, out)


def _one_layer(act, s11: Jet, s12: Jet, s22: Jet, nodes: int, collapse: np.ndarray):
    """Expectation bi-jets for one layer of the recurrence.

    Returns ``(E sigma sigma, E sigma' sigma', E sigma(u)^2, E sigma(v)^2)``.
    ``collapse`` flags entries where ``rho`` is locally constant +-1.
    """
    layout = s11.layout
    a = sqrt(_floored(s11))
    b = sqrt(_floored(s22))
    rho = s12 * reciprocal(a * b)
    rho0 = np.clip(rho.value, -1.0, 1.0)
    e00 = np.zeros(s11.table.shape)
    e11 = np.zeros(s11.table.shape)

    if np.any(collapse):
        idx = collapse
        sign = np.sign(rho0[idx])
        sign[sign == 0] = 1.0
        a_c = Jet(layout, a.table[idx])
        p_c = Jet(layout, b.table[idx] * sign[..., None])
        e00[idx] = _jet_expectation(act, 0, 0, a_c, p_c, None, nodes).table
        e11[idx] = _jet_expectation(act, 1, 1, a_c, p_c, None, nodes).table
    live = ~collapse
    if np.any(live):
        a_l = Jet(layout, a.table[live])
        b_l = Jet(layout, b.table[live])
        rho_l = Jet(layout, rho.table[live])
        rho_l.table[..., 0] = rho0[live]
        s = sqrt(1.0 - rho_l * rho_l)
        p_l = b_l * rho_l
        q_l = b_l * s
        e00[live] = _jet_expectation(act, 0, 0, a_l, p_l, q_l, nodes).table
        e11[live] = _jet_expectation(act, 1, 1, a_l, p_l, q_l, nodes).table

    self_u = _jet_expectation(act, 0, 0, a, a, None, nodes)
    self_v = _jet_expectation(act, 0, 0, b, b, None, nodes)
    return Jet(layout, e00), Jet(layout, e11), self_u, self_v


def _floored(j: Jet) -> Jet:
    t = j.table.copy()
    t[..., 0] = np.maximum(t[..., 0], VARIANCE_FLOOR)
    return Jet(j.layout, t)


def _richardson_step(spec: KernelSpec) -> float:
    # balances O(h^4) extrapolation error against rounding amplified like h^(2-2k)
    return 1e-16 ** (1.0 / (2 * spec.order + 2))


def _bijet_direct(spec: KernelSpec, x, xp, collapse_layers: np.ndarray) -> Jet:
    act = spec.act
    xs, xps = bijet_inputs(x, xp, spec.order)
    s11 = dot_jets(xs, xs)
    s22 = dot_jets(xps, xps)
    s12 = dot_jets(xs, xps)
    nt = s12
    for layer in range(spec.depth):
        e00, e11, su, sv = _one_layer(act, s11, s12, s22, spec.nodes, collapse_layers[layer])
        nt = e00 + nt * e11
        s11, s12, s22 = su, e00, sv
    return nt


def _classify(spec: KernelSpec, x, xp):
    """Per-layer flags: (collapse, needs_extrapolation) with shapes (L, B)."""
    rho = rho_ladder(spec, x, xp)
    near = 1.0 - rho**2 <= SINGULAR_TOL
    if spec.order == 0 or not np.any(near):
        return near, np.zeros_like(near)
    d = x.shape[-1]
    scale = np.maximum(np.linalg.norm(xp, axis=-1), 1e-3)
    h = 1e-2 * scale
    locally_flat = np.ones_like(near)
    for i in range(d):
        for sgn in (1.0, -1.0):
            shifted = xp.copy()
            shifted[..., i] += sgn * h
            r = rho_ladder(spec, x, shifted)
            locally_flat &= 1.0 - r**2 <= SINGULAR_TOL
    collapse = near & locally_flat
    return collapse, near & ~locally_flat


def kernel_bijet(spec: KernelSpec, x, xp) -> Jet:
    """Bi-jet of ``K^NT_{L+1}`` at ``(x, x')``: all ``D_x^alpha D_{x'}^beta K`` with
    ``|alpha|, |beta| <= spec.order``.

    Inputs have shape (d,) or (B, d). Where ``rho = +-1`` holds on a whole
    neighbourhood (collinear inputs in one dimension) the eta-axis is collapsed
    exactly; where it holds only at the point (the diagonal ``x = x'``) the
    entries are Richardson-extrapolated from symmetric shifts of ``x'``.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    single = x.ndim == 1 and xp.ndim == 1
    x, xp = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(xp))
    x = x.copy()
    xp = xp.copy()
    collapse, singular = _classify(spec, x, xp)
    bad = np.any(singular, axis=0)
    layout = JetLayout(x.shape[-1], spec.order, blocks=2)
    table = np.zeros((x.shape[0], layout.size))
    good = ~bad
    if np.any(good):
        table[good] = _bijet_direct(spec, x[good], xp[good], collapse[:, good]).table
    if np.any(bad):
        table[bad] = _extrapolated(spec, x[bad], xp[bad])
    out = Jet(layout, table)
    if single:
        return Jet(layout, table[0])
    return out


def _extrapolated(spec: KernelSpec, x, xp) -> np.ndarray:
    d = x.shape[-1]
    scale = np.maximum(np.linalg.norm(xp, axis=-1), 1e-3)[:, None]
    h = _richardson_step(spec) * scale

    def shifted_mean(step):
        acc = 0.0
        for i in range(d):
            for sgn in (1.0, -1.0):
                s = xp.copy()
                s[:, i] += sgn * step[:, 0]
                coll, sing = _classify(spec, x, s)
                acc = acc + _bijet_direct(spec, x, s, coll).table
        return acc / (2 * d)

    f1 = shifted_mean(h)
    f2 = shifted_mean(h / 2)
    return (4.0 * f2 - f1) / 3.0


def operator_kernel(op: DiffOperator, spec: KernelSpec, x, xp) -> np.ndarray:
    """``T_x T_{x'} K^NT(x, x')``."""
    if op.order > spec.order:
        raise ValueError(f"operator order {op.order} exceeds kernel order {spec.order}")
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    bj = kernel_bijet(spec, x, xp)
    cx = op.coefficient_vector(x, spec.order)
    cxp = op.coefficient_vector(xp, spec.order)
    return np.einsum("...a,...ab,...b->...", cx, bj.block_matrix(), cxp)


def operator_gram(
    op: DiffOperator, spec: KernelSpec, X, Y=None, chunk: int = 512
) -> np.ndarray:
    """Gram matrix of ``T_x T_{x'} K^NT`` on samples ``X`` (and ``Y``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sym = Y is None
    Y = X if sym else np.atleast_2d(np.asarray(Y, dtype=float))
    n, m = len(X), len(Y)
    if sym:
        ii, jj = np.triu_indices(n)
    else:
        ii, jj = np.divmod(np.arange(n * m), m)
    vals = np.empty(len(ii))
    for s in range(0, len(ii), chunk):
        sl = slice(s, s + chunk)
        vals[sl] = operator_kernel(op, spec, X[ii[sl]], Y[jj[sl]])
    G = np.zeros((n, m))
    G[ii, jj] = vals
    if sym:
        G[jj, ii] = vals
    return G


def kernel_gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Plain ``K^NT`` Gram matrix (values only, fast path)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    _, nt = rf_nt_kernels(spec, X[:, None, :], Y[None, :, :])
    return nt[-1]

