"""Verification and simulation tests: grid margins vs contraction factors,
rollout contracts, seeded stochastic reproducibility, and empirical rate
bounds."""

import numpy as np
import pytest

from contragp import stochastic, synthesis, systems, verify_sim
from contragp.errors import DataError, DimensionError
from contragp.kernels import Kernel


def random_contracting_pair(rng, n=2):
    """A metric P and a map A whose certificate block is PSD."""
    while True:
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.5 * np.eye(n)
        A = 0.6 * rng.normal(size=(n, n))
        if np.linalg.eigvalsh(synthesis.ies_block(P, A))[0] > 1e-6:
            return P, A


class TestVerifyGrid:
    def test_linear_loop_uniform_margin_and_factor(self):
        rng = np.random.default_rng(51)
        P, A = random_contracting_pair(rng)
        model = systems.linear_system(A, [0.0, 1.0])
        box = systems.Box.make([-1, -1], [1, 1])
        rep = verify_sim.verify_grid(model, None, P, box, 5)
        expect_margin = float(np.linalg.eigvalsh(synthesis.ies_block(P, A))[0])
        np.testing.assert_allclose(rep.margins, expect_margin, rtol=1e-9)
        # independent oracle: generalized eigenvalue of A P A^T against P
        from scipy.linalg import eigh

        lam2 = eigh(A @ P @ A.T, P, eigvals_only=True)[-1]
        np.testing.assert_allclose(rep.factors, np.sqrt(lam2), rtol=1e-9)
        assert rep.consistent

    def test_zero_closed_loop(self):
        # f = 2x under u = -2x gives closed-loop map 0: factor 0 and
        # uniform margin 1 for P = 1
        toy = systems.SystemModel(
            1, lambda x: 2.0 * np.asarray(x, dtype=float).reshape(-1),
            lambda x: np.array([[2.0]]), b=[1.0], equilibrium=[0.0])

        class LinearLaw:
            def control_batch(self, X):
                return -2.0 * np.atleast_2d(X)[:, 0]

            def control_grad_batch(self, X):
                return np.full((np.atleast_2d(X).shape[0], 1), -2.0)

        box = systems.Box.make([-1.0], [1.0])
        rep = verify_sim.verify_grid(toy, LinearLaw(), np.eye(1), box, 5)
        np.testing.assert_allclose(rep.margins, 1.0, atol=1e-12)
        assert rep.lam == 0.0
        assert rep.consistent
        # the fitted one-point law matches the exact gradient at its data
        # point, so the local margin there is also 1
        rep_syn = synthesis.run_synthesis(toy, Kernel(dim=1),
                                          np.array([[0.0]]), mode="two-step")
        tight = verify_sim.verify_grid(toy, rep_syn.controller, rep_syn.P,
                                       systems.Box.make([-1e-6], [1e-6]), 3)
        np.testing.assert_allclose(tight.margins, 1.0, atol=1e-6)
        assert tight.lam < 1e-3

    def test_margin_sign_matches_factor_on_expansive_model(self):
        model = systems.linear_system(1.5 * np.eye(2), [0.0, 1.0])
        rep = verify_sim.verify_grid(model, None, np.eye(2),
                                     systems.Box.make([-1, -1], [1, 1]), 3)
        assert rep.min_margin < 0.0 and rep.lam > 1.0 and rep.consistent


class TestRollout:
    def test_equilibrium_start_stays_constant(self, oscillator, osc_two_step):
        traj = verify_sim.rollout(oscillator, osc_two_step.controller,
                                  np.zeros(2), 50)
        np.testing.assert_allclose(traj.states, np.zeros((51, 2)), atol=1e-12)

    def test_toy_reaches_origin_in_one_step(self):
        toy = systems.SystemModel(
            1, lambda x: 2.0 * np.asarray(x, dtype=float).reshape(-1),
            lambda x: np.array([[2.0]]), b=[1.0], equilibrium=[0.0])
        rep = synthesis.run_synthesis(toy, Kernel(dim=1), np.array([[0.0]]),
                                      mode="two-step")

        class ExactLaw:
            def control(self, x):
                return -2.0 * float(np.asarray(x).reshape(-1)[0])

        traj = verify_sim.rollout(toy, ExactLaw(), [1.0], 3)
        np.testing.assert_allclose(traj.states.reshape(-1), [1.0, 0.0, 0.0, 0.0],
                                   atol=1e-12)
        # the fitted law is exactly linear near 0 only to first order; the
        # state still collapses by orders of magnitude in a few steps
        traj2 = verify_sim.rollout(toy, rep.controller, [0.01], 3)
        assert abs(traj2.states[-1, 0]) < 1e-6

    def test_states_satisfy_the_step_map(self, oscillator, osc_two_step):
        traj = verify_sim.rollout(oscillator, osc_two_step.controller,
                                  [1.0, -1.0], 20)
        for k in range(traj.horizon):
            expected = oscillator.step(traj.states[k], traj.inputs[k])
            np.testing.assert_allclose(traj.states[k + 1], expected,
                                       atol=1e-12)

    def test_divergence_flagged_and_truncated(self):
        model = systems.linear_system(np.diag([3.0, 3.0]), [0.0, 1.0])
        traj = verify_sim.rollout(model, None, [1.0, 1.0], 100)
        assert traj.diverged
        assert traj.horizon < 100

    def test_bad_horizon_rejected(self, oscillator):
        with pytest.raises(DataError):
            verify_sim.rollout(oscillator, None, [0.0, 0.0], 0)


class TestStochasticRollout:
    def _loop(self, slope=0.5, noise=0.1):
        return stochastic.StochasticClosedLoop(
            mean=lambda x: slope * np.asarray(x, dtype=float).reshape(-1),
            mean_jac=lambda x: np.array([[slope]]),
            noise_std=lambda x: np.array([noise]),
            noise_jac=lambda x: np.array([[0.0]]),
            metric=np.array([[1.0]]))

    def test_zero_noise_matches_deterministic(self):
        loop = self._loop(noise=0.0)
        traj = verify_sim.rollout_stochastic(loop, [1.0], 10, seed=1)
        np.testing.assert_allclose(traj.states.reshape(-1),
                                   [0.5 ** k for k in range(11)], atol=1e-14)

    def test_same_seed_bitwise_identical(self):
        loop = self._loop()
        t1 = verify_sim.rollout_stochastic(loop, [1.0], 100, seed=42)
        t2 = verify_sim.rollout_stochastic(loop, [1.0], 100, seed=42)
        np.testing.assert_array_equal(t1.states, t2.states)
        t3 = verify_sim.rollout_stochastic(loop, [1.0], 100, seed=43)
        assert not np.array_equal(t1.states, t3.states)

    def test_learned_loop_records_inputs(self):
        from contragp import drift_gp, stochastic
        from contragp.kernels import Kernel

        rng = np.random.default_rng(8)
        X = rng.normal(size=(5, 1))
        Y = 0.5 * X
        model = drift_gp.fit_drift(drift_gp.DriftDataset(X, Y, 0.05),
                                   Kernel(dim=1))
        ctrl_rep = synthesis.run_synthesis(model.as_system_model(b=[1.0]),
                                           Kernel(dim=1), np.array([[0.0]]),
                                           mode="two-step")
        loop = stochastic.StochasticClosedLoop.from_drift_model(
            model, ctrl_rep.controller, np.array([1.0]), np.eye(1))
        traj = verify_sim.rollout_stochastic(loop, [0.5], 10, seed=3)
        expected_u0 = ctrl_rep.controller.control([0.5])
        assert traj.inputs[0] == pytest.approx(expected_u0, rel=1e-12)

    def test_second_moment_matches_linear_recursion(self):
        # x+ = 0.5 x + 0.1 w has stationary variance 0.01 / (1 - 0.25)
        loop = self._loop()
        finals = []
        for seed in range(10_000):
            traj = verify_sim.rollout_stochastic(loop, [0.0], 50, seed=seed)
            finals.append(traj.states[-1, 0])
        second_moment = float(np.mean(np.square(finals)))
        assert second_moment == pytest.approx(0.01 / 0.75, rel=0.1)


class TestContractionRate:
    def test_identical_trajectories_all_skipped(self, oscillator,
                                                osc_two_step):
        traj = verify_sim.rollout(oscillator, osc_two_step.controller,
                                  [1.0, 1.0], 10)
        lam, info = verify_sim.contraction_rate([(traj, traj)], np.eye(2))
        assert lam == 0.0
        assert info["all_skipped"]

    def test_linear_loop_bounded_by_whitened_norm(self):
        rng = np.random.default_rng(52)
        P, A = random_contracting_pair(rng)
        model = systems.linear_system(A, [0.0, 1.0])
        trajs = [verify_sim.rollout(model, None, x0, 30)
                 for x0 in rng.normal(size=(4, 2))]
        pairs = [(trajs[0], trajs[1]), (trajs[2], trajs[3])]
        lam, info = verify_sim.contraction_rate(pairs, P)
        from scipy.linalg import eigh

        bound = float(np.sqrt(eigh(A.T @ P @ A, P, eigvals_only=True)[-1]))
        assert lam <= bound + 1e-9
        assert info["used"] > 0

    def test_region_filter_reports_exclusions(self):
        model = systems.linear_system(0.5 * np.eye(2), [0.0, 1.0])
        t1 = verify_sim.rollout(model, None, [4.0, 0.0], 10)
        t2 = verify_sim.rollout(model, None, [0.0, 4.0], 10)
        box = systems.Box.make([-1, -1], [1, 1])
        lam, info = verify_sim.contraction_rate([(t1, t2)], np.eye(2),
                                                region=box)
        assert info["excluded"] > 0

    def test_mismatched_lengths_rejected(self, oscillator, osc_two_step):
        t1 = verify_sim.rollout(oscillator, osc_two_step.controller,
                                [1.0, 1.0], 10)
        t2 = verify_sim.rollout(oscillator, osc_two_step.controller,
                                [1.0, 1.0], 11)
        with pytest.raises(DimensionError):
            verify_sim.contraction_rate([(t1, t2)], np.eye(2))

    def test_step_ratios_bounded_by_grid_factor(self, oscillator,
                                                osc_two_step, control_box):
        # while both trajectories stay in the verified region, every
        # empirical step ratio respects the grid-certified factor
        ver = verify_sim.verify_grid(oscillator, osc_two_step.controller,
                                     osc_two_step.P, control_box, 41)
        W = np.linalg.inv(osc_two_step.P)
        rng = np.random.default_rng(60)
        worst = 0.0
        for _ in range(5):
            t1 = verify_sim.rollout(oscillator, osc_two_step.controller,
                                    rng.uniform(-2, 2, 2), 500)
            t2 = verify_sim.rollout(oscillator, osc_two_step.controller,
                                    rng.uniform(-2, 2, 2), 500)
            lam, _ = verify_sim.contraction_rate([(t1, t2)], W,
                                                 region=control_box)
            worst = max(worst, lam)
        assert worst <= ver.lam + 1e-6

    def test_oscillator_pairs_contract(self, oscillator, osc_two_step):
        rng = np.random.default_rng(53)
        W = np.linalg.inv(osc_two_step.P)
        box = systems.Box.make([-2, -2], [2, 2])
        trajs = [verify_sim.rollout(oscillator, osc_two_step.controller,
                                    rng.uniform(-2, 2, size=2), 300)
                 for _ in range(6)]
        pairs = [(trajs[0], trajs[1]), (trajs[2], trajs[3]),
                 (trajs[4], trajs[5])]
        lam, info = verify_sim.contraction_rate(pairs, W, region=box)
        assert info["used"] > 0
        assert lam < 1.0
