"""Kernel gradient flow, physics-informed losses and network training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import KernelSpec, operator_gram
from .multiindex import DiffOperator, Term, MultiIndex, resolve_operator
from .network import (
    NetworkConfig,
    NetworkParams,
    init_params,
    operator_values,
    residual_gradient,
)

VARIANTS = ("plain", "L1", "L2", "L3")
PD_TOL = 1e-12
NORMALIZATIONS = ("mean", "half")  # 1/n (experiments) or 1/(2n) (gradient-flow theory)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


class FlowError(ValueError):
    pass


def phi_gf(t, z):
    """``(1 - exp(-t z)) / z`` with the limit ``t`` at ``z = 0``."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    tz = t * z
    small = np.abs(tz) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        big = -np.expm1(-tz) / z
    series = t * (1.0 - tz / 2.0 + tz * tz / 6.0)
    out = np.where(small, series, big)
    return out[()] if out.ndim == 0 else out


@dataclass
class FlowSolution:
    """Eigendecomposition of ``K(X, X) / n`` plus the initial residual."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    v0: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_gram(cls, gram, v0, targets, tol: float = 1e-8) -> "FlowSolution":
        gram = np.asarray(gram, dtype=float)
        n = gram.shape[0]
        lam, Q = np.linalg.eigh(0.5 * (gram + gram.T) / n)
        if lam[-1] > 0 and lam[0] < -tol * lam[-1]:
            raise FlowError(f"Gram matrix is not PSD: min eigenvalue {lam[0]:.3e}")
        return cls(lam, Q, np.asarray(v0, dtype=float), np.asarray(targets, dtype=float))

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0] * self.n)

    def coefficients(self, t: float) -> np.ndarray:
        """``phi_t(K/n) (Y - v0(X)) / n``, so that ``v(x) = v0(x) + K(x, X) @ coef``."""
        Q = self.eigenvectors
        r = Q.T @ (self.targets - self.v0)
        return Q @ (phi_gf(t, self.eigenvalues) * r) / self.n


def kernel_flow_predict(flow: FlowSolution, kernel_row, t: float, v0_x=0.0) -> np.ndarray:
    """``v(x, t)`` for the flow ``dv/dt = -(1/n) K(x, X) (v(X) - Y)``.

    ``kernel_row`` is ``K(x, X)`` of shape (n,) or (m, n); ``v0_x`` is the
    initial value at ``x``.
    """
    return np.asarray(v0_x, dtype=float) + np.asarray(kernel_row) @ flow.coefficients(t)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _distance(x):
    x0 = x[..., 0]
    return x0 * (1.0 - x0)


def _distance_laplacian_operator() -> DiffOperator:
    # -(D u)'' = 2 u - 2 (1 - 2x) u' - x (1 - x) u''
    return DiffOperator(
        1,
        (
            Term(2.0, MultiIndex((0,))),
            Term(lambda x: -2.0 * (1.0 - 2.0 * x[..., 0]), MultiIndex((1,))),
            Term(lambda x: -_distance(x), MultiIndex((2,))),
        ),
        "neg_laplacian_of_distance",
    )


@dataclass
class Block:
    """One squared-residual sum ``weight * sum_i (T u(p_i) - y_i)^2``."""

    op: DiffOperator
    points: np.ndarray
    targets: np.ndarray
    weight: float


@dataclass
class TrainingProblem:
    samples: np.ndarray
    targets: np.ndarray | None = None
    operator: DiffOperator | str = "id"
    variant: str = "plain"
    w: float = 0.5
    a: float = 1.0
    normalization: str = "mean"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if len(self.samples) < 1:
            raise ValueError("need at least one sample")
        if self.variant not in VARIANTS:
            raise ValueError(f"unsupported loss variant {self.variant!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.variant == "L3" and not 0.0 < self.w < 1.0:
            raise ValueError("w must lie in (0,1)")
        if self.variant != "plain" and self.dim != 1:
            raise ValueError(f"loss {self.variant} is defined on [0, 1] only")
        if self.targets is None:
            self.targets = self.target_fn(self.samples)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if len(self.targets) != len(self.samples):
            raise ValueError("one target per sample")
        self.operator = resolve_operator(self.operator, self.dim)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return len(self.samples)

    def target_fn(self, x) -> np.ndarray:
        return np.sin(2.0 * np.pi * self.a * np.asarray(x)[..., 0])

    @property
    def order(self) -> int:
        return max(b.op.order for b in self.blocks())

    def blocks(self) -> list[Block]:
        c = 1.0 / self.n
        if self.normalization == "half":
            c *= 0.5
        X, Y = self.samples, self.targets
        if self.variant == "plain":
            return [Block(self.operator, X, Y, c)]
        if self.variant == "L1":
            op = DiffOperator(1, (Term(_distance, MultiIndex((0,))),), "distance")
            return [Block(op, X, Y, c)]
        if self.variant == "L2":
            return [Block(_distance_laplacian_operator(), X, Y, c)]
        neg_lap = DiffOperator.from_terms(1, [(-1.0, (2,))], "neg_dxx")
        bw = self.w * (0.5 if self.normalization == "half" else 1.0)
        return [
            Block(neg_lap, X, Y, (1.0 - self.w) * c),
            Block(DiffOperator.identity(1), np.array([[0.0], [1.0]]), np.zeros(2), bw),
        ]


def loss_eval(problem: TrainingProblem, params: NetworkParams) -> float:
    total = 0.0
    for b in problem.blocks():
        r = operator_values(params, b.op, b.points) - b.targets
        total += b.weight * float(r @ r)
    return total


def loss_and_grad(problem: TrainingProblem, params: NetworkParams) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros(params.config.num_params)
    for b in problem.blocks():
        residual = {}

        def weights(values, b=b):
            residual["r"] = values - b.targets
            return 2.0 * b.weight * residual["r"]

        _, g = residual_gradient(params, b.op, b.points, weights)
        total += b.weight * float(residual["r"] @ residual["r"])
        grad += g
    return total, grad


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def geometric_checkpoints(steps: int) -> list[int]:
    out = {0, steps}
    s = 1
    while s < steps:
        out.add(s)
        s *= 2
    return sorted(out)


@dataclass
class Recorder:
    """Captures loss and ``T u`` on an evaluation grid at chosen steps."""

    checkpoints: Sequence[int] | None = None
    grid: np.ndarray | None = None
    operator: DiffOperator | None = None
    records: list[dict] = field(default_factory=list)

    def wants(self, step: int, steps: int) -> bool:
        cps = self.checkpoints if self.checkpoints is not None else geometric_checkpoints(steps)
        return step in set(cps)

    def record(self, step: int, lr: float, loss: float, params: NetworkParams, **extra):
        rec = {"step": step, "time": step * lr, "loss": loss, **extra}
        if self.grid is not None:
            op = self.operator or DiffOperator.identity(params.config.dim)
            rec["values"] = operator_values(params, op, self.grid)
        self.records.append(rec)


@dataclass
class Trajectory:
    params: NetworkParams
    records: list[dict]

    @property
    def steps(self) -> list[int]:
        return [r["step"] for r in self.records]

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])


def _check_finite(step, loss):
    if not math.isfinite(loss):
        raise TrainingDiverged(step, loss)


def gradient_descent(
    problem: TrainingProblem,
    params: NetworkParams,
    lr: float,
    steps: int,
    recorder: Recorder | None = None,
) -> Trajectory:
    """Full-batch descent ``theta <- theta - lr * grad L``; ``params`` is not mutated."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    recorder = recorder or Recorder()
    theta = params.flat()
    cfg = params.config
    current = params.copy()
    for step in range(steps + 1):
        loss, grad = loss_and_grad(problem, current)
        _check_finite(step, loss)
        if recorder.wants(step, steps):
            recorder.record(step, lr, loss, current)
        if step == steps:
            break
        theta = theta - lr * grad
        current = NetworkParams.from_flat(cfg, theta)
    return Trajectory(current, recorder.records)


def adam_train(
    problem: TrainingProblem,
    params: NetworkParams,
    lr: float,
    steps: int,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    recorder: Recorder | None = None,
) -> Trajectory:
    """Adam on the normalized loss ``L(theta) / L(theta_0)`` (PyTorch update rule)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
        raise ValueError("betas must lie in [0, 1)")
    recorder = recorder or Recorder()
    cfg = params.config
    theta = params.flat()
    current = params.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    loss0 = None
    for step in range(steps + 1):
        loss, grad = loss_and_grad(problem, current)
        _check_finite(step, loss)
        if loss0 is None:
            loss0 = loss if loss > 0 else 1.0
        norm_loss = loss / loss0
        if recorder.wants(step, steps):
            recorder.record(step, lr, norm_loss, current, raw_loss=loss)
        if step == steps:
            break
        g = grad / loss0
        t = step + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        current = NetworkParams.from_flat(cfg, theta)
    return Trajectory(current, recorder.records)


# ---------------------------------------------------------------------------
# network vs kernel flow
# ---------------------------------------------------------------------------


@dataclass
class DynamicsComparison:
    steps: list[int]
    times: np.ndarray
    deviation: np.ndarray  # sup over grid of |v_NN - v_NTK| per checkpoint
    losses: np.ndarray
    lambda_min: float

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max())

    @property
    def mean_deviation(self) -> float:
        return float(self.deviation.mean())


def compare_dynamics(
    problem: TrainingProblem,
    config: NetworkConfig,
    lr: float,
    steps: int,
    grid,
    kernel_spec: KernelSpec | None = None,
    checkpoints: Sequence[int] | None = None,
    allow_unresolved: bool = True,
) -> DynamicsComparison:
    """Train by gradient descent and track the sup-distance to the kernel flow.

    The kernel flow starts from the network's own initial ``T u`` and uses the
    analytic ``T_x T_x' K^NT``. Step ``s`` is compared with flow time ``s * lr``.
    The problem must use the ``half`` (1/(2n)) normalization so that descent
    discretizes exactly that flow.

    Smooth kernels on a few points in one dimension give Gram matrices whose
    smallest eigenvalue sits below double-precision resolution. With
    ``allow_unresolved`` such a matrix is accepted as long as it is not
    indefinite beyond rounding (``lambda_min >= -PD_TOL * lambda_max``).
    """
    if problem.variant != "plain":
        raise ValueError("the kernel flow is defined for the plain operator loss")
    if problem.normalization != "half":
        raise ValueError("use normalization='half' so gradient descent matches the kernel flow")
    if config.use_bias or config.parameterization != "ntk":
        raise ValueError("the analytic kernel matches the bias-free NTK parameterization only")
    op = problem.operator
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != problem.dim:
        grid = grid.reshape(-1, problem.dim)
    spec = kernel_spec or KernelSpec(config.depth, config.activation, op.order)
    X = problem.samples
    gram = operator_gram(op, spec, X)
    eig = np.linalg.eigvalsh(gram)
    lam_min = float(eig[0])
    # eigenvalues inside the rounding band cannot be told apart from zero
    if lam_min <= 0 and (lam_min < -PD_TOL * eig[-1] or not allow_unresolved):
        raise FlowError(f"analytic Gram is not positive definite: lambda_min = {lam_min:.3e}")
    cross = operator_gram(op, spec, grid, X)

    params = init_params(config)
    v0_X = operator_values(params, op, X)
    flow = FlowSolution.from_gram(gram, v0_X, problem.targets)
    recorder = Recorder(checkpoints=checkpoints, grid=grid, operator=op)
    traj = gradient_descent(problem, params, lr, steps, recorder)
    v0_grid = traj.records[0]["values"]
    devs, times = [], []
    for rec in traj.records:
        v_ntk = kernel_flow_predict(flow, cross, rec["time"], v0_grid)
        devs.append(np.max(np.abs(rec["values"] - v_ntk)))
        times.append(rec["time"])
    return DynamicsComparison(traj.steps, np.array(times), np.array(devs), traj.losses, lam_min)
