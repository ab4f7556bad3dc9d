import numpy as np
import pytest

from optforce.objective import GradientEstimate
from optforce.optimizer import (DescentConfig, DescentTrace, OptimizerError,
                                descend, wolfe_line_search)


def quadratic_objective(center=None):
    """Deterministic q(a) = |a - center|^2 / 2 packaged like the MC objective."""

    def evaluate(a, seed):
        a = np.asarray(a, dtype=np.float64)
        c = np.zeros_like(a) if center is None else center
        d = a - c
        return GradientEstimate(value=float(0.5 * d @ d), gradient=d,
                                value_stderr=0.0,
                                gradient_stderr=np.zeros_like(a),
                                n_paths=1, n_censored=0, mean_steps=1.0)

    return evaluate


class TestWolfeLineSearch:
    def test_quadratic_exact_minimizer_accepted(self):
        evaluate = quadratic_objective()
        a = np.array([2.0, -1.0])
        est0 = evaluate(a, 0)
        res = wolfe_line_search(a, -a, lambda b: evaluate(b, 0),
                                value0=est0.value, grad0=est0.gradient,
                                c1=1e-4, c2=0.9, alpha_init=1.0, alpha_max=10.0)
        assert res.alpha == pytest.approx(1.0)
        assert res.value == pytest.approx(0.0, abs=1e-14)
        assert not res.fallback

    def test_ascent_direction_rejected(self):
        evaluate = quadratic_objective()
        a = np.array([1.0])
        est0 = evaluate(a, 0)
        with pytest.raises(ValueError):
            wolfe_line_search(a, +a, lambda b: evaluate(b, 0),
                              value0=est0.value, grad0=est0.gradient)

    def test_wolfe_conditions_hold_at_accepted_step(self):
        # non-quadratic smooth objective
        def evaluate(a, seed=0):
            a = np.asarray(a, dtype=np.float64)
            val = float(np.sum(np.cosh(a)))
            return GradientEstimate(value=val, gradient=np.sinh(a),
                                    value_stderr=0.0,
                                    gradient_stderr=np.zeros_like(a),
                                    n_paths=1, n_censored=0, mean_steps=1.0)

        a = np.array([1.5, -2.0, 0.5])
        est0 = evaluate(a)
        d = -est0.gradient
        c1, c2 = 1e-4, 0.9
        res = wolfe_line_search(a, d, evaluate, value0=est0.value,
                                grad0=est0.gradient, c1=c1, c2=c2)
        dphi0 = float(est0.gradient @ d)
        accepted = evaluate(a + res.alpha * d)
        assert accepted.value <= est0.value + c1 * res.alpha * dphi0
        assert abs(float(accepted.gradient @ d)) <= -c2 * dphi0

    def test_first_step_cap(self):
        evaluate = quadratic_objective()
        a = np.array([100.0])
        est0 = evaluate(a, 0)
        res = wolfe_line_search(a, -est0.gradient, lambda b: evaluate(b, 0),
                                value0=est0.value, grad0=est0.gradient,
                                max_first_step=1.0)
        # first trial moves by at most 1 in coefficient space, then expands
        assert res.alpha <= 10.0
        assert evaluate(a - res.alpha * est0.gradient, 0).value < est0.value


class TestDescend:
    def test_converges_on_quadratic(self):
        cfg = DescentConfig(max_iters=50, grad_tol=1e-8, batch_size=1)
        center = np.array([1.0, -2.0, 0.5])
        a, trace = descend(np.zeros(3), cfg, quadratic_objective(center), seed=0)
        np.testing.assert_allclose(a, center, atol=1e-6)
        assert trace.converged

    def test_already_optimal_returns_unchanged(self):
        cfg = DescentConfig(max_iters=50, grad_tol=1e-6, batch_size=1)
        center = np.array([0.3, 0.4])
        a, trace = descend(center.copy(), cfg, quadratic_objective(center), seed=0)
        np.testing.assert_array_equal(a, center)
        assert len(trace.records) == 1
        assert trace.records[0].alpha == 0.0
        assert trace.converged

    def test_fixed_reseed_deterministic(self):
        def noisy(a, seed):
            rng = np.random.default_rng(seed)
            a = np.asarray(a, dtype=np.float64)
            g = a + 0.01 * rng.standard_normal(a.size)
            return GradientEstimate(value=float(0.5 * a @ a), gradient=g,
                                    value_stderr=0.001,
                                    gradient_stderr=np.full(a.size, 0.01),
                                    n_paths=100, n_censored=0, mean_steps=1.0)

        cfg = DescentConfig(max_iters=10, grad_tol=1e-3, batch_size=1,
                            reseed_policy="fixed")
        a1, t1 = descend(np.array([1.0, 1.0]), cfg, noisy, seed=5)
        a2, t2 = descend(np.array([1.0, 1.0]), cfg, noisy, seed=5)
        np.testing.assert_array_equal(a1, a2)
        assert [r.cost for r in t1.records] == [r.cost for r in t2.records]

    def test_termination_couples_to_gradient_noise(self):
        # true gradient far below its own stderr: stop immediately
        def pure_noise(a, seed):
            rng = np.random.default_rng(seed)
            a = np.asarray(a, dtype=np.float64)
            g = 1e-4 * rng.standard_normal(a.size)
            return GradientEstimate(value=1.0, gradient=g, value_stderr=0.1,
                                    gradient_stderr=np.full(a.size, 1.0),
                                    n_paths=10, n_censored=0, mean_steps=1.0)

        cfg = DescentConfig(max_iters=50, grad_tol=1e-9, batch_size=1)
        _, trace = descend(np.array([1.0]), cfg, pure_noise, seed=1)
        assert len(trace.records) == 1
        assert trace.converged

    def test_always_terminates(self):
        def drifting(a, seed):
            a = np.asarray(a, dtype=np.float64)
            return GradientEstimate(value=float(np.sum(a)), gradient=np.ones(a.size),
                                    value_stderr=0.0,
                                    gradient_stderr=np.zeros(a.size),
                                    n_paths=1, n_censored=0, mean_steps=1.0)

        cfg = DescentConfig(max_iters=7, grad_tol=1e-9, batch_size=1)
        _, trace = descend(np.zeros(2), cfg, drifting, seed=0)
        assert len(trace.records) == 7
        assert not trace.converged

    def test_nan_initial_rejected(self):
        cfg = DescentConfig(batch_size=1)
        with pytest.raises(OptimizerError):
            descend(np.array([np.nan]), cfg, quadratic_objective(), seed=0)

    def test_best_seen_cost_not_worse_than_start(self):
        cfg = DescentConfig(max_iters=15, grad_tol=1e-10, batch_size=1,
                            reseed_policy="fixed")
        center = np.array([2.0])
        obj = quadratic_objective(center)
        a0 = np.array([0.0])
        a_best, _ = descend(a0, cfg, obj, seed=0)
        assert obj(a_best, 0).value <= obj(a0, 0).value

    def test_scalar_problem_matches_golden_section(self):
        # 1-basis problem: deterministic surrogate of the CRN objective
        def scalar_obj(a, seed):
            a = np.asarray(a, dtype=np.float64)
            val = float((a[0] - 0.7) ** 2 * (1.0 + 0.1 * np.sin(a[0])) + 1.0)
            g = np.array([2 * (a[0] - 0.7) * (1.0 + 0.1 * np.sin(a[0]))
                          + (a[0] - 0.7) ** 2 * 0.1 * np.cos(a[0])])
            return GradientEstimate(value=val, gradient=g, value_stderr=0.0,
                                    gradient_stderr=np.zeros(1),
                                    n_paths=1, n_censored=0, mean_steps=1.0)

        from scipy.optimize import minimize_scalar
        ref = minimize_scalar(lambda t: scalar_obj(np.array([t]), 0).value,
                              bounds=(-2, 3), method="bounded").x
        cfg = DescentConfig(max_iters=100, grad_tol=1e-7, batch_size=1)
        a, _ = descend(np.array([-1.0]), cfg, scalar_obj, seed=0)
        assert a[0] == pytest.approx(ref, abs=2e-5)


class TestDescentTrace:
    def make_trace(self, costs, stderr=0.01):
        trace = DescentTrace()
        from optforce.optimizer import DescentRecord
        for i, c in enumerate(costs):
            trace.append(DescentRecord(iteration=i, coefficients=np.zeros(1),
                                       cost=c, cost_stderr=stderr, grad_norm=1.0,
                                       grad_stderr_norm=0.1, alpha=0.1,
                                       mean_steps=10.0, n_censored=0))
        return trace

    def test_monotone_cost_not_flagged(self):
        trace = self.make_trace(list(np.linspace(10, 1, 12)))
        assert not trace.non_converging

    def test_increasing_cost_flagged(self):
        trace = self.make_trace([10, 9, 8, 7, 6, 5, 6, 7, 8, 9, 10, 11])
        assert trace.non_converging

    def test_csv_round_trip(self, tmp_path):
        trace = self.make_trace([3.0, 2.0, 1.0, 0.9, 0.8, 0.7])
        path = tmp_path / "trace.csv"
        trace.write_csv(path, config_hash="abc123")
        text = path.read_text()
        assert text.startswith("# config_hash: abc123")
        header = text.splitlines()[1]
        assert header == "iteration,cost,grad_norm,alpha,stderr,mean_steps"
        assert len(text.splitlines()) == 2 + 6
