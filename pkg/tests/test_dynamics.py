import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import rk4
from pinntk.dynamics import (
    FlowError,
    FlowSolution,
    Recorder,
    TrainingDiverged,
    TrainingProblem,
    adam_train,
    compare_dynamics,
    geometric_checkpoints,
    gradient_descent,
    kernel_flow_predict,
    loss_and_grad,
    loss_eval,
    phi_gf,
)
from pinntk.jet import jet_compose_scalar, jet_product, reciprocal, seed_coordinate_jet
from pinntk.multiindex import apply_operator
from pinntk.network import NetworkConfig, NetworkParams, init_params


def zero_network(widths=(1, 8, 1), **kw):
    p = init_params(NetworkConfig(widths, **kw))
    p.weights[-1][:] = 0.0
    return p


def random_psd(rng, n, rank=None):
    A = rng.normal(size=(n, rank or n))
    return A @ A.T


class TestPhi:
    def test_examples(self):
        assert phi_gf(3.0, 0.0) == 3.0
        assert_allclose(phi_gf(1.0, 1.0), 1 - np.exp(-1), rtol=1e-15)
        assert phi_gf(0.0, 5.0) == 0.0

    @pytest.mark.parametrize("t", [1e-3, 1.0, 10.0, 100.0])
    def test_continuity_near_zero(self, t):
        assert abs(phi_gf(t, 1e-9) - t) <= 1e-6 * t

    @given(st.floats(0, 50), st.floats(1e-4, 20))
    def test_matches_direct_formula(self, t, z):
        assert_allclose(phi_gf(t, z), -np.expm1(-t * z) / z, rtol=1e-12, atol=1e-300)

    def test_vectorized_and_negative_time(self):
        assert phi_gf(2.0, np.array([0.0, 1.0])).shape == (2,)
        with pytest.raises(ValueError):
            phi_gf(-1.0, 1.0)


class TestKernelFlow:
    def test_single_point(self):
        k, y, t = 2.5, 0.7, 0.9
        flow = FlowSolution.from_gram([[k]], [0.0], [y])
        assert_allclose(kernel_flow_predict(flow, [k], t), y * (1 - np.exp(-k * t)), rtol=1e-13)

    def test_time_zero_returns_initial(self):
        rng = np.random.default_rng(0)
        K = random_psd(rng, 5)
        flow = FlowSolution.from_gram(K, rng.normal(size=5), rng.normal(size=5))
        assert_allclose(kernel_flow_predict(flow, K, 0.0, flow.v0), flow.v0, rtol=0, atol=0)

    def test_rejects_indefinite(self):
        with pytest.raises(FlowError):
            FlowSolution.from_gram([[1.0, 0.0], [0.0, -1.0]], [0, 0], [1, 1])

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_runge_kutta(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 11))
        # last row/column is an extra evaluation point off the sample set
        K = random_psd(rng, n + 1, rank=int(rng.integers(1, n + 2)))
        K /= np.trace(K) / (n + 1)
        Y = rng.normal(size=n)
        v0 = rng.normal(size=n + 1)
        flow = FlowSolution.from_gram(K[:n, :n], v0[:n], Y)

        def rhs(t, v):
            return -(K[:, :n] @ (v[:n] - Y)) / n

        ts = np.linspace(0, 10, 11)
        ref = [v0]
        y = v0
        for a, b in zip(ts[:-1], ts[1:]):
            y = rk4(rhs, y, b - a, 200)[-1]
            ref.append(y)
        pred = [kernel_flow_predict(flow, K[:, :n], t, v0) for t in ts]
        assert np.max(np.abs(np.array(pred) - np.array(ref))) <= 1e-6


class TestLosses:
    X = np.linspace(0.05, 0.95, 7)

    @pytest.mark.parametrize("a", [1.0, 0.5, 5.0])
    def test_zero_network_l1(self, a):
        prob = TrainingProblem(self.X, variant="L1", a=a)
        assert_allclose(loss_eval(prob, zero_network()), np.mean(np.sin(2 * np.pi * a * self.X) ** 2), rtol=1e-13)

    def test_zero_network_l3(self):
        prob = TrainingProblem(self.X, variant="L3", w=0.3)
        expect = 0.7 * np.mean(np.sin(2 * np.pi * self.X) ** 2)
        assert_allclose(loss_eval(prob, zero_network()), expect, rtol=1e-13)

    def test_half_normalization(self):
        p = init_params(NetworkConfig((1, 8, 1)))
        mean = loss_eval(TrainingProblem(self.X, variant="L3", normalization="mean"), p)
        half = loss_eval(TrainingProblem(self.X, variant="L3", normalization="half"), p)
        assert_allclose(half, mean / 2, rtol=1e-13)

    @pytest.mark.parametrize("a", [1.0, 2.0])
    def test_l2_exact_solution(self, a):
        # -(D u)'' = sin(2 pi a x) with D u = sin(2 pi a x) / (2 pi a)^2, D = x (1 - x)
        w = 2 * np.pi * a
        x = self.X[:, None]
        xj = seed_coordinate_jet(x, 0, 2)
        s = jet_compose_scalar(lambda y, n: np.stack([np.sin(w * y + j * np.pi / 2) * w**j for j in range(n + 1)]), xj)
        inv_d = reciprocal(jet_product(xj, 1.0 - xj))
        u = jet_product(s, inv_d) * (1.0 / w**2)
        prob = TrainingProblem(self.X, variant="L2", a=a)
        (block,) = prob.blocks()
        assert_allclose(apply_operator(block.op, u, x), prob.targets, atol=1e-12)

    def test_l3_boundary_block(self):
        prob = TrainingProblem(self.X, variant="L3", w=0.25)
        interior, boundary = prob.blocks()
        assert_array_equal(boundary.points.ravel(), [0.0, 1.0])
        assert boundary.weight == 0.25 and interior.weight == 0.75 / 7

    @pytest.mark.parametrize("kw", [{"variant": "L4"}, {"variant": "L3", "w": 1.5}, {"normalization": "sum"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainingProblem(self.X, **kw)

    def test_gradient_matches_finite_differences(self):
        p = init_params(NetworkConfig((1, 6, 6, 1), use_bias=True, seed=2))
        for variant in ("L1", "L2", "L3"):
            prob = TrainingProblem(self.X, variant=variant)
            _, g = loss_and_grad(prob, p)
            theta = p.flat()
            for i in (0, 7, 30, len(theta) - 1):
                e = np.zeros_like(theta)
                e[i] = 1e-6
                up = loss_eval(prob, NetworkParams.from_flat(p.config, theta + e))
                dn = loss_eval(prob, NetworkParams.from_flat(p.config, theta - e))
                assert_allclose(g[i], (up - dn) / 2e-6, rtol=1e-5, atol=1e-8)


class TestGradientDescent:
    def test_zero_steps(self):
        p = init_params(NetworkConfig((1, 16, 1)))
        prob = TrainingProblem(np.linspace(0, 1, 5))
        traj = gradient_descent(prob, p, 0.1, 0)
        assert_array_equal(traj.params.flat(), p.flat())
        assert traj.steps == [0]
        assert traj.losses[0] == loss_eval(prob, p)

    def test_scalar_linear_model(self):
        # u = b * a * x with one hidden identity unit; closed-form two-variable recursion
        p = init_params(NetworkConfig((1, 1, 1), activation="identity"))
        x1, y1, lr = 0.8, 0.5, 0.2
        prob = TrainingProblem(np.array([x1]), targets=np.array([y1]))
        traj = gradient_descent(prob, p, lr, 25)
        a, b = p.weights[0][0, 0], p.weights[1][0, 0]
        for _ in range(25):
            g = 2 * (a * b * x1 - y1)
            a, b = a - lr * g * b * x1, b - lr * g * a * x1
        assert_allclose(traj.params.flat(), [a, b], rtol=1e-12)

    def test_monotone_loss(self):
        p = init_params(NetworkConfig((1, 1024, 1), seed=3))
        prob = TrainingProblem(np.linspace(0.05, 0.95, 10))
        traj = gradient_descent(prob, p, 0.05, 500, Recorder(checkpoints=range(501)))
        assert np.all(np.diff(traj.losses) <= 1e-15)
        assert traj.losses[-1] < traj.losses[0]

    def test_recorder_grid(self):
        p = init_params(NetworkConfig((1, 8, 1)))
        prob = TrainingProblem(np.linspace(0, 1, 4))
        rec = Recorder(checkpoints=[0, 3], grid=np.linspace(0, 1, 11)[:, None])
        traj = gradient_descent(prob, p, 0.01, 3, rec)
        assert traj.steps == [0, 3]
        assert traj.records[1]["values"].shape == (11,)
        assert traj.records[1]["time"] == pytest.approx(0.03)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_step(self):
        p = init_params(NetworkConfig((1, 4, 1), activation="identity"))
        prob = TrainingProblem(np.array([0.5, 1.0]), targets=np.array([1e3, -1e3]))
        with pytest.raises(TrainingDiverged) as info:
            gradient_descent(prob, p, 1e3, 200)
        assert info.value.step > 0

    def test_geometric_checkpoints(self):
        assert geometric_checkpoints(10) == [0, 1, 2, 4, 8, 10]
        assert geometric_checkpoints(0) == [0]


class TestAdam:
    def make(self):
        p = init_params(NetworkConfig((1, 32, 1), use_bias=True, parameterization="standard", seed=1))
        return p, TrainingProblem(np.linspace(0.05, 0.95, 12), variant="L1")

    def test_zero_steps_normalized_to_one(self):
        p, prob = self.make()
        traj = adam_train(prob, p, 1e-3, 0)
        assert traj.losses.tolist() == [1.0]
        assert traj.records[0]["raw_loss"] == loss_eval(prob, p)

    def test_deterministic(self):
        p, prob = self.make()
        a = adam_train(prob, p, 1e-3, 20, recorder=Recorder(checkpoints=range(21)))
        b = adam_train(prob, p, 1e-3, 20, recorder=Recorder(checkpoints=range(21)))
        assert_array_equal(a.losses, b.losses)

    def test_large_eps_is_scaled_descent(self):
        # beta = 0: step is lr * g / (|g| + eps), close to lr * g / eps once eps >> |g|
        p = init_params(NetworkConfig((1, 1, 1), activation="identity"))
        prob = TrainingProblem(np.array([0.8]), targets=np.array([0.5]))
        lr, eps = 1e-2, 1e3
        loss0, g = loss_and_grad(prob, p)
        g = g / loss0
        traj = adam_train(prob, p, lr, 1, betas=(0.0, 0.0), eps=eps)
        step = p.flat() - traj.params.flat()
        assert_allclose(step, lr * g / (np.abs(g) + eps), rtol=1e-9)
        assert_allclose(step, lr * g / eps, rtol=1e-2)
        long = adam_train(prob, p, 1.0, 200, betas=(0.0, 0.0), eps=10.0)
        assert long.losses[-1] < long.losses[0]

    def test_loss_decreases(self):
        p, prob = self.make()
        traj = adam_train(prob, p, 1e-3, 100)
        assert traj.losses[-1] < 0.9

    def test_bad_betas(self):
        p, prob = self.make()
        with pytest.raises(ValueError):
            adam_train(prob, p, 1e-3, 1, betas=(1.0, 0.9))


class TestCompare:
    def test_zero_deviation_at_start(self):
        X = np.linspace(0.05, 0.95, 5)
        prob = TrainingProblem(X, normalization="half")
        res = compare_dynamics(prob, NetworkConfig((1, 64, 1), seed=2), 0.1, 20, np.linspace(0, 1, 21))
        assert res.steps[0] == 0
        assert res.deviation[0] <= 1e-12
        assert res.lambda_min > 0

    def test_requirements(self):
        X = np.linspace(0.1, 0.9, 3)
        with pytest.raises(ValueError):
            compare_dynamics(TrainingProblem(X), NetworkConfig((1, 8, 1)), 0.1, 1, X)
        with pytest.raises(ValueError):
            compare_dynamics(TrainingProblem(X, normalization="half"), NetworkConfig((1, 8, 1), use_bias=True), 0.1, 1, X)

    def test_wider_tracks_flow_better(self):
        X = np.linspace(0.05, 0.95, 6)
        prob = TrainingProblem(X, normalization="half")
        grid = np.linspace(0, 1, 21)
        dev = {}
        for m in (64, 4096):
            runs = [compare_dynamics(prob, NetworkConfig((1, m, 1), seed=s), 0.1, 200, grid) for s in range(3)]
            dev[m] = np.mean([r.mean_deviation for r in runs])
        assert dev[4096] < dev[64]
