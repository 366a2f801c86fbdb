"""Finite-width fully connected networks with jets over the input.

The forward pass carries a jet of every pre-activation, so ``D^alpha u`` comes
out exact. Parameter gradients of ``T u`` use a reverse pass whose adjoints are
themselves jet tables: the activation step ``s = sigma(z)`` linearizes to jet
multiplication by ``sigma'(z)``, whose adjoint is a transposed Leibniz sum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import Activation, get_activation
from .jet import Jet, JetLayout, _product_adjoint, compose_with_powers, taylor_powers
from .multiindex import DiffOperator, MultiIndex
from . import rng as rng_mod


@dataclass(frozen=True)
class NetworkConfig:
    """Widths ``(m_0 = d, m_1, ..., m_L, m_{L+1} = 1)``.

    ``parameterization="ntk"`` scales layer ``l >= 1`` by ``1/sqrt(m_l)`` and
    draws N(0, 1) weights; ``"standard"`` drops the scaling and uses the
    PyTorch ``nn.Linear`` uniform init. Biases are off unless requested.
    """

    widths: tuple[int, ...]
    activation: str = "tanh"
    use_bias: bool = False
    seed: int = 0
    parameterization: str = "ntk"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer: widths (d, m_1, ..., 1)")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be positive")
        if self.widths[-1] != 1:
            raise ValueError("output width m_{L+1} must be 1")
        if self.parameterization not in ("ntk", "standard"):
            raise ValueError("parameterization must be 'ntk' or 'standard'")
        get_activation(self.activation)

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def depth(self) -> int:
        return len(self.widths) - 2

    @property
    def act(self) -> Activation:
        return get_activation(self.activation)

    def layer_scale(self, l: int) -> float:
        if self.parameterization == "standard" or l == 0:
            return 1.0
        return 1.0 / np.sqrt(self.widths[l])

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for l in range(len(self.widths) - 1):
            out.append((self.widths[l + 1], self.widths[l]))
            if self.use_bias:
                out.append((self.widths[l + 1],))
        return out

    @property
    def num_params(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))


@dataclass
class NetworkParams:
    config: NetworkConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        for l, W in enumerate(self.weights):
            want = (self.config.widths[l + 1], self.config.widths[l])
            if W.shape != want:
                raise ValueError(f"W^{l} has shape {W.shape}, expected {want}")
        if self.config.use_bias and self.biases is None:
            raise ValueError("config asks for biases but none were given")

    def flat(self) -> np.ndarray:
        parts = []
        for l, W in enumerate(self.weights):
            parts.append(W.ravel())
            if self.config.use_bias:
                parts.append(self.biases[l].ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, config: NetworkConfig, theta: np.ndarray) -> "NetworkParams":
        theta = np.asarray(theta, dtype=float)
        if theta.size != config.num_params:
            raise ValueError(f"expected {config.num_params} parameters, got {theta.size}")
        weights, biases, pos = [], [], 0
        for l in range(len(config.widths) - 1):
            shape = (config.widths[l + 1], config.widths[l])
            size = shape[0] * shape[1]
            weights.append(theta[pos:pos + size].reshape(shape).copy())
            pos += size
            if config.use_bias:
                biases.append(theta[pos:pos + shape[0]].copy())
                pos += shape[0]
        return cls(config, weights, biases if config.use_bias else None)

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_flat(self.config, self.flat())

    def save(self, path) -> tuple[Path, Path]:
        """Raw little-endian float64 dump plus a JSON header with the shapes."""
        path = Path(path)
        data = path.with_suffix(".bin")
        header = path.with_suffix(".json")
        self.flat().astype("<f8").tofile(data)
        meta = {
            "dtype": "<f8",
            "shapes": [list(s) for s in self.config.shapes],
            "config": {
                "widths": list(self.config.widths),
                "activation": self.config.activation,
                "use_bias": self.config.use_bias,
                "seed": self.config.seed,
                "parameterization": self.config.parameterization,
            },
        }
        header.write_text(json.dumps(meta, indent=2))
        return data, header

    @classmethod
    def load(cls, path) -> "NetworkParams":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        c = meta["config"]
        config = NetworkConfig(tuple(c["widths"]), c["activation"], c["use_bias"], c["seed"], c["parameterization"])
        theta = np.fromfile(path.with_suffix(".bin"), dtype=meta["dtype"])
        return cls.from_flat(config, theta)


def init_params(config: NetworkConfig, generator: np.random.Generator | None = None) -> NetworkParams:
    """i.i.d. N(0, 1) weights (NTK) or ``nn.Linear``-style uniform weights and biases."""
    g = generator if generator is not None else rng_mod.stream(config.seed, "init")
    weights, biases = [], []
    for l in range(len(config.widths) - 1):
        fan_in, fan_out = config.widths[l], config.widths[l + 1]
        if config.parameterization == "ntk":
            weights.append(g.standard_normal((fan_out, fan_in)))
            if config.use_bias:
                biases.append(g.standard_normal(fan_out))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(g.uniform(-bound, bound, (fan_out, fan_in)))
            if config.use_bias:
                biases.append(g.uniform(-bound, bound, fan_out))
    return NetworkParams(config, weights, biases if config.use_bias else None)


@dataclass
class _Cache:
    layout: JetLayout
    inputs: np.ndarray  # (n, d, N) coordinate jets
    acts: list[np.ndarray] = field(default_factory=list)  # sigma(z^l), l = 1..L, (n, m_l, N)
    dacts: list[np.ndarray] = field(default_factory=list)  # sigma'(z^l)
    out: np.ndarray | None = None  # (n, N)


def _input_jets(X: np.ndarray, layout: JetLayout) -> np.ndarray:
    n, d = X.shape
    t = np.zeros((n, d, layout.size))
    t[:, :, 0] = X
    if layout.order > 0:
        for i in range(d):
            e = [0] * d
            e[i] = 1
            t[:, i, layout.position[MultiIndex(e)]] = 1.0
    return t


def _forward(params: NetworkParams, X, k: int, need_backward: bool = True) -> _Cache:
    cfg = params.config
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[-1] != cfg.dim:
        raise ValueError(f"input dimension {X.shape[-1]} != network dimension {cfg.dim}")
    act = cfg.act
    layout = JetLayout(cfg.dim, k)
    cache = _Cache(layout, _input_jets(X, layout))
    z = np.matmul(params.weights[0], cache.inputs)
    if cfg.use_bias:
        z[..., 0] += params.biases[0]
    for l in range(1, cfg.depth + 1):
        powers = taylor_powers(Jet(layout, z), limit=k)
        nd = len(powers) + (1 if need_backward else 0)
        derivs = act.derivatives(z[..., 0], nd)
        s = compose_with_powers(derivs, powers, layout.size)
        cache.acts.append(s)
        if need_backward:
            cache.dacts.append(compose_with_powers(derivs[1:], powers, layout.size))
        z = cfg.layer_scale(l) * np.matmul(params.weights[l], s)
        if cfg.use_bias:
            z[..., 0] += params.biases[l]
    cache.out = z[:, 0, :]
    return cache


def forward_jet(params: NetworkParams, x, k: int) -> Jet:
    """Jet of ``u(x; theta)`` up to total order ``k``; ``x`` is (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    cache = _forward(params, x, k, need_backward=False)
    out = cache.out[0] if x.ndim == 1 else cache.out
    return Jet(cache.layout, out)


def forward(params: NetworkParams, X) -> np.ndarray:
    """Plain network output ``u(x)`` for rows of ``X``."""
    return _forward(params, X, 0, need_backward=False).out[:, 0]


def _backward(params: NetworkParams, cache: _Cache, seed: np.ndarray, per_sample: bool):
    """Gradients of ``sum_n <seed[n], out_jet[n]>`` w.r.t. every parameter.

    ``seed`` has shape (n, N). With ``per_sample`` the result is (n, P),
    otherwise the summed (P,) vector.
    """
    cfg = params.config
    layout = cache.layout
    zbar = seed[:, None, :]  # adjoint of z^{L+1}, (n, 1, N)
    grads: list[np.ndarray] = []
    for l in range(cfg.depth, -1, -1):
        s = cache.acts[l - 1] if l > 0 else cache.inputs
        scale = cfg.layer_scale(l)
        if per_sample:
            gW = scale * np.matmul(zbar, s.transpose(0, 2, 1))
        else:
            gW = scale * (zbar.transpose(1, 0, 2).reshape(zbar.shape[1], -1) @ s.transpose(0, 2, 1).reshape(-1, s.shape[1]))
        layer = [gW.reshape(gW.shape[0], -1) if per_sample else gW.ravel()]
        if cfg.use_bias:
            gb = zbar[..., 0] if per_sample else zbar[..., 0].sum(axis=0)
            layer.append(gb)
        grads = layer + grads
        if l == 0:
            break
        sbar = scale * np.matmul(params.weights[l].T, zbar)
        zbar = _product_adjoint(layout, cache.dacts[l - 1], sbar)
    return np.concatenate(grads, axis=-1)


def operator_values(params: NetworkParams, op: DiffOperator, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cache = _forward(params, X, op.order, need_backward=False)
    c = op.coefficient_vector(X, op.order)
    return np.sum(cache.out * c, axis=-1)


def grad_theta_Tu(params: NetworkParams, op: DiffOperator, x) -> np.ndarray:
    """``d(T u)(x) / d theta`` as a flat vector; (n, P) for a batch of points."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    k = op.order
    cache = _forward(params, X, k)
    c = op.coefficient_vector(X, k)
    g = _backward(params, cache, c, per_sample=True)
    return g[0] if x.ndim == 1 else g


def empirical_nnk(params: NetworkParams, op: DiffOperator, x, xp) -> float:
    g1 = grad_theta_Tu(params, op, np.asarray(x, dtype=float).reshape(-1))
    g2 = grad_theta_Tu(params, op, np.asarray(xp, dtype=float).reshape(-1))
    return float(g1 @ g2)


def empirical_gram(params: NetworkParams, op: DiffOperator, X, chunk: int = 256) -> np.ndarray:
    """``K_{T,theta}(X, X)`` from per-sample gradient vectors.

    Memory is ``n * P``; the inner products cost ``O(n^2 P)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.vstack([grad_theta_Tu(params, op, X[s:s + chunk]) for s in range(0, len(X), chunk)])
    K = G @ G.T
    return 0.5 * (K + K.T)


def residual_gradient(params: NetworkParams, op: DiffOperator, X, weights) -> tuple[np.ndarray, np.ndarray]:
    """``(T u(X), sum_i weights_i * d(T u)(x_i)/d theta)`` in one pass."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = op.order
    cache = _forward(params, X, k)
    c = op.coefficient_vector(X, k)
    values = np.sum(cache.out * c, axis=-1)
    w = np.asarray(weights(values) if callable(weights) else weights, dtype=float)
    return values, _backward(params, cache, c * w[:, None], per_sample=False)
