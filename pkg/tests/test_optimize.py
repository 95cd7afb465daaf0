import numpy as np
import pytest

from awjm.cost import CostSpec
from awjm.data import MeasurementSet, etch_preset
from awjm.model import Grid1D, ModelParams, TimeScheme, final_profile
from awjm.optimize import (
    LineSearch,
    NonFiniteCostError,
    OptConfig,
    StopReason,
    lbfgs,
    minimize,
    two_loop,
)


def spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q @ np.diag(np.geomspace(1, cond, n)) @ q.T


def quadratic(A, b):
    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b
    return fun


class TestTwoLoop:
    def test_empty_history(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(two_loop(g, [], []), g)

    @pytest.mark.parametrize("seed", range(3))
    def test_newton_step(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        A = spd(rng, n)
        # A-conjugate pairs, as produced by exact line searches on a quadratic
        s_hist = []
        for v in rng.normal(size=(n, n)):
            for s in s_hist:
                v = v - (s @ A @ v) / (s @ A @ s) * s
            s_hist.append(v)
        y_hist = [A @ s for s in s_hist]
        g = rng.normal(size=n)
        np.testing.assert_allclose(two_loop(g, s_hist, y_hist), np.linalg.solve(A, g), rtol=1e-8, atol=1e-10)


class TestLbfgs:
    @pytest.mark.parametrize("ls", list(LineSearch))
    def test_quadratic_5(self, ls):
        rng = np.random.default_rng(11)
        A = spd(rng, 5)
        b = rng.normal(size=5)
        x, tr = lbfgs(quadratic(A, b), np.zeros(5), OptConfig(line_search=ls, grad_tol=1e-11))
        np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)
        assert tr.n_iters <= 30

    def test_monotone_cost(self):
        rng = np.random.default_rng(4)
        A = spd(rng, 8, 1e3)
        b = rng.normal(size=8)
        _, tr = lbfgs(quadratic(A, b), np.ones(8), OptConfig())
        assert np.all(np.diff(tr.costs) < 0)

    def test_bounds(self):
        # unconstrained minimizer has negative entries; the bound is active there
        A = np.eye(3)
        b = np.array([1.0, -2.0, 0.5])
        x, tr = lbfgs(quadratic(A, b), np.ones(3), OptConfig(), lower=0.0)
        np.testing.assert_allclose(x, [1.0, 0.0, 0.5], atol=1e-8)
        assert all(np.all(h >= 0) for h in tr.history)

    def test_rosenbrock(self):
        def fun(x):
            f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
            g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
            return f, g
        x, tr = lbfgs(fun, np.array([-1.2, 1.0]), OptConfig(max_iters=200, grad_tol=1e-9))
        np.testing.assert_allclose(x, [1, 1], atol=1e-6)

    def test_max_iters(self):
        A = spd(np.random.default_rng(0), 10, 1e4)
        _, tr = lbfgs(quadratic(A, np.ones(10)), np.zeros(10), OptConfig(max_iters=3))
        assert tr.stop_reason is StopReason.MAX_ITERS and tr.n_iters == 3

    def test_zero_iters_at_optimum(self):
        _, tr = lbfgs(quadratic(np.eye(2), np.zeros(2)), np.zeros(2), OptConfig())
        assert tr.stop_reason is StopReason.GRAD_TOL and tr.n_iters == 0

    def test_non_finite_start(self):
        with pytest.raises(NonFiniteCostError):
            lbfgs(lambda x: (np.nan, x), np.ones(2), OptConfig())

    def test_line_search_failure(self):
        # wrong-signed gradient: no step along -g ever decreases the cost
        def fun(x):
            return float(x @ x), -2 * x
        _, tr = lbfgs(fun, np.ones(2), OptConfig())
        assert tr.stop_reason is StopReason.LINE_SEARCH_FAIL

    @pytest.mark.parametrize("kw", [{"memory_m": 0}, {"grad_tol": 0.0}, {"cost_tol": -1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            OptConfig(**kw)


class TestMinimize:
    def test_e_identification_small(self, tmp_path):
        g = Grid1D.symmetric(1.0, 30)
        s = TimeScheme(1.0, 200)
        truth = ModelParams(2.0, 3.0, etch_preset("gaussian", g))
        meas = MeasurementSet.single(final_profile(truth, g, s))
        start = truth.copy(e=np.full(g.n, 0.05))
        sol, tr = minimize(start, meas, CostSpec("grad_e", 1e-8), g, s, OptConfig(max_iters=300))
        err = np.linalg.norm(sol.e - truth.e) / np.linalg.norm(truth.e)
        assert err < 2e-2
        assert sol.a == 2.0 and sol.k == 3.0
        assert np.all(sol.e >= 0)
        assert np.all(np.diff(tr.costs) < 0)
        tr.write_csv(tmp_path / "trace.csv")
        head = (tmp_path / "trace.csv").read_text().splitlines()[0]
        assert head == "iter,misfit,reg,total,gradnorm,step"

    def test_trace_breakdown(self):
        g = Grid1D.symmetric(1.0, 12)
        s = TimeScheme(1.0, 40)
        truth = ModelParams(2.0, 3.0, etch_preset("gaussian", g))
        meas = MeasurementSet.single(final_profile(truth, g, s))
        _, tr = minimize(truth.copy(e=0.5 * truth.e), meas, CostSpec("grad_e", 1e-3), g, s,
                         OptConfig(max_iters=5))
        for r in tr.records:
            assert r.total == pytest.approx(r.misfit + r.reg, rel=1e-14)
            assert r.misfit >= 0 and r.reg >= 0
