import numpy as np
import pytest

from qprox import (Graph, NonConvergenceError, ParameterError,
                   ProblemInstance, RegularizerSpec, build_instance,
                   generate_instance)
from qprox.central import (GaussianDecaying, NoError, Replay,
                           convergence_constants, exact_reference,
                           inexact_prox_svrg)


@pytest.fixture(scope="module")
def reference(small_instance):
    return exact_reference(small_instance, tol=1e-12)


class TestExactReference:
    def test_unregularized_square_system(self):
        gen = np.random.default_rng(0)
        H = gen.standard_normal((3, 3)) + 3 * np.eye(3)
        x_true = gen.standard_normal(3)
        inst = ProblemInstance(Graph(1, [[]]), [3], [H], [H @ x_true],
                               RegularizerSpec("l1", 0.0), x_true)
        x_star = exact_reference(inst, tol=1e-13)
        assert np.linalg.norm(x_star - np.linalg.solve(H, H @ x_true)) < 1e-9

    def test_objective_monotone_nonincreasing(self, small_instance):
        values = []
        exact_reference(small_instance, tol=1e-12,
                        on_iterate=lambda x: values.append(
                            small_instance.objective(x)))
        diffs = np.diff(values)
        assert np.all(diffs <= 1e-12)

    def test_agrees_with_tighter_longer_oracle(self):
        inst = generate_instance(40, 8, 10, 80,
                                 RegularizerSpec("elastic_net", 0.1, 0.1),
                                 seed=11)
        x_fast = exact_reference(inst, tol=1e-12)
        x_slow = exact_reference(inst, tol=1e-14, max_iter=5_000_000)
        assert np.linalg.norm(x_fast - x_slow) <= 1e-8

    def test_step_above_cap_rejected(self, small_instance):
        M = small_instance.aggregate_hessian()
        L_F = float(np.linalg.eigvalsh(M)[-1])
        with pytest.raises(ParameterError):
            exact_reference(small_instance, eta=1.5 / L_F)

    def test_nonconvergence_carries_residual(self, small_instance):
        with pytest.raises(NonConvergenceError) as info:
            exact_reference(small_instance, tol=1e-15, max_iter=3)
        assert info.value.residual > 0


class TestConstants:
    def test_hand_valued_example(self):
        alpha, beta, ok = convergence_constants(1.0, 1.0, 0.1, 80)
        assert alpha == pytest.approx(1 / 4.8 + 32.4 / 48, abs=1e-10)
        assert beta == pytest.approx(0.1 / 48, abs=1e-15)
        assert ok

    def test_step_at_boundary_rejected(self):
        with pytest.raises(ParameterError):
            convergence_constants(1.0, 1.0, 0.25, 80)

    def test_large_T_limit(self):
        eta, L = 0.1, 1.0
        alpha, _, _ = convergence_constants(1.0, L, eta, 10 ** 9)
        limit = 4 * L * eta / (1 - 4 * L * eta)
        assert alpha == pytest.approx(limit, rel=1e-6)

    def test_missing_strong_convexity(self):
        with pytest.raises(ParameterError):
            convergence_constants(0.0, 1.0, 0.1, 10)

    def test_alpha_ge_one_flagged(self):
        alpha, _, ok = convergence_constants(1e-6, 1.0, 0.1, 10)
        assert alpha >= 1 and not ok


class TestInexactProxSvrg:
    def eta(self, inst):
        return 0.1 / inst.smoothness().L_bar

    def test_unbiased_direction_over_all_nodes(self, small_instance):
        inst = small_instance
        gen = np.random.default_rng(1)
        x = gen.standard_normal(inst.P)
        x_tilde = gen.standard_normal(inst.P)
        g = inst.full_gradient(x_tilde)
        mean_v = np.zeros(inst.P)
        for ell in range(inst.N):
            v = inst.lifted_gradient(ell, x) + (
                g - inst.lifted_gradient(ell, x_tilde))
            mean_v += v
        mean_v /= inst.N
        expect = inst.full_gradient(x)
        assert np.linalg.norm(mean_v - expect) <= 1e-12 * max(
            1.0, np.linalg.norm(expect))

    def test_converges_to_reference(self, small_instance, reference):
        inst = small_instance
        trace = inexact_prox_svrg(inst, self.eta(inst), T=12, S=700,
                                  seed=5, x_star=reference)
        assert trace.gap[0] > 1e-2
        assert inst.objective(trace.final_x) - inst.objective(reference) < 1e-8
        assert np.all(trace.gap >= -1e-9)

    def test_zero_replay_identical_to_no_injector(self, small_instance,
                                                  reference):
        inst = small_instance
        eta = self.eta(inst)
        zeros = [[np.zeros(inst.P) for _ in range(8)] for _ in range(5)]
        a = inexact_prox_svrg(inst, eta, T=8, S=5, seed=9, x_star=reference)
        b = inexact_prox_svrg(inst, eta, T=8, S=5, seed=9, x_star=reference,
                              injector=Replay(zeros))
        assert np.array_equal(a.gap, b.gap)
        assert np.array_equal(a.final_x, b.final_x)

    def test_single_node_single_step_is_gradient_descent(self):
        graph = Graph(1, [[]])
        inst = build_instance(graph, 3, 6, RegularizerSpec("l1", 0.0), seed=2)
        eta = self.eta(inst)
        trace = inexact_prox_svrg(inst, eta, T=1, S=4, record_inner=True)
        x = np.zeros(3)
        for s in range(4):
            x = x - eta * inst.full_gradient(x)
            assert np.allclose(trace.inner[s][0], x, atol=1e-15)

    def test_variance_reduction_bound_exhaustive(self, small_instance,
                                                 reference):
        # conditional second moment of the reduced direction, all nodes
        inst = small_instance
        eta = self.eta(inst)
        L_bar = inst.smoothness().L_bar
        g_star = inst.objective(reference)
        trace = inexact_prox_svrg(inst, eta, T=8, S=3, seed=3,
                                  record_inner=True)
        x_tilde = np.zeros(inst.P)
        for s in range(3):
            g = inst.full_gradient(x_tilde)
            g_anchor = inst.objective(x_tilde) - g_star
            x_prev = x_tilde.copy()
            for t in range(8):
                full_here = inst.full_gradient(x_prev)
                moment = 0.0
                for ell in range(inst.N):
                    w = inst.lifted_gradient(ell, x_prev) + (
                        g - inst.lifted_gradient(ell, x_tilde))
                    moment += float(np.sum((w - full_here) ** 2))
                moment /= inst.N
                bound = 4 * L_bar * (
                    inst.objective(x_prev) - g_star + g_anchor)
                assert moment <= bound
                x_prev = trace.inner[s][t]
            x_tilde = sum(trace.inner[s]) / 8

    def test_same_seed_identical(self, small_instance):
        inst = small_instance
        a = inexact_prox_svrg(inst, self.eta(inst), T=6, S=4, seed=11)
        b = inexact_prox_svrg(inst, self.eta(inst), T=6, S=4, seed=11)
        assert np.array_equal(a.final_x, b.final_x)

    def test_step_precondition(self, small_instance):
        L_bar = small_instance.smoothness().L_bar
        with pytest.raises(ParameterError):
            inexact_prox_svrg(small_instance, 1.0 / L_bar, T=4, S=2)
        inexact_prox_svrg(small_instance, 1.0 / L_bar, T=4, S=2, force=True)


class TestInjectors:
    def test_gaussian_energy_decays_at_rate(self):
        inj = GaussianDecaying(sigma0=0.5, rate=0.8, seed=4)
        draw = inj.drawer()
        energies = []
        for s in range(6):
            total = 0.0
            for t in range(400):
                e = draw(s, t, 50)
                total += float(e @ e)
            energies.append(total)
        ratios = np.array(energies[1:]) / np.array(energies[:-1])
        assert np.all(np.abs(ratios - 0.8) < 0.08)

    def test_gaussian_zero_mean(self):
        draw = GaussianDecaying(1.0, 0.9, seed=5).drawer()
        mean = np.mean([draw(0, t, 200).mean() for t in range(500)])
        assert abs(mean) < 5e-3

    def test_replay_returns_exact_arrays(self):
        seq = [[np.arange(3.0) + t for t in range(2)]]
        draw = Replay(seq).drawer()
        assert draw(0, 1, 3) is seq[0][1]

    def test_no_error_draws_none(self):
        assert NoError().drawer()(0, 0, 7) is None

    def test_bad_rate_rejected(self):
        with pytest.raises(ParameterError):
            GaussianDecaying(1.0, 1.0)
