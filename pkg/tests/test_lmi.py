"""LMI solver tests: worked families with hand-derived optima, soundness on
randomly constructed feasible problems, monotonicity/scaling properties, and
the independent eigenvalue certification path."""

import numpy as np
import pytest

from contragp import lmi
from contragp.errors import DataError, UnboundedMarginError


def scalar_family_problem():
    """Blocks [[P, 2P+q], [2P+q, P]] over z = (P, q), box 1 <= P <= 10.

    Hand analysis: q = -2P zeroes the off-diagonal, the block becomes P*I,
    so the optimal margin is 10 at (P, q) = (10, -20).
    """
    coeffs = np.array([[[1.0, 2.0], [2.0, 1.0]],
                       [[0.0, 1.0], [1.0, 0.0]]])
    return lmi.LmiProblem(
        dim=2, blocks=[lmi.AffineBlock(np.zeros((2, 2)), coeffs)],
        lower=np.array([1.0, -np.inf]), upper=np.array([10.0, np.inf]))


def char_poly_min_eig(M):
    """Smallest eigenvalue of a symmetric 3x3 via characteristic-polynomial
    roots: an eigensolver-independent oracle."""
    a = -float(np.trace(M))
    b = 0.5 * (np.trace(M) ** 2 - np.trace(M @ M))
    c = -float(np.linalg.det(M))
    roots = np.roots([1.0, a, b, c])
    return float(np.real(roots).min())


def random_feasible_problem(rng):
    m = int(rng.integers(1, 4))
    nb = int(rng.integers(1, 4))
    z_star = rng.normal(size=m)
    blocks = []
    for _ in range(nb):
        s = int(rng.integers(1, 4))
        A = rng.normal(size=(m, s, s))
        A = 0.5 * (A + A.transpose(0, 2, 1))
        D = rng.normal(size=(s, s))
        C = D @ D.T + 0.3 * np.eye(s) - np.tensordot(z_star, A, axes=(0, 0))
        blocks.append(lmi.AffineBlock(C, A))
    return lmi.LmiProblem(dim=m, blocks=blocks, lower=z_star - 2.0,
                          upper=z_star + 2.0), z_star


class TestWorkedExamples:
    def test_constant_block_no_variables(self):
        p = lmi.LmiProblem(dim=0,
                           blocks=[lmi.AffineBlock(np.eye(2), np.zeros((0, 2, 2)))])
        sol = lmi.solve(p)
        assert sol.status == "optimal"
        assert sol.margin == pytest.approx(1.0)
        assert sol.z.shape == (0,)

    def test_scalar_family_optimum(self):
        sol = lmi.solve(scalar_family_problem())
        assert sol.status == "optimal"
        assert sol.margin == pytest.approx(10.0, abs=1e-4)
        assert sol.z[0] == pytest.approx(10.0, abs=1e-3)
        assert sol.z[1] == pytest.approx(-20.0, abs=2e-3)

    def test_bounded_infeasible_reports_best_margin(self):
        p = lmi.LmiProblem(
            dim=1, blocks=[lmi.AffineBlock(np.array([[-1.0]]),
                                           np.array([[[1.0]]]))],
            lower=np.array([-0.5]), upper=np.array([0.5]))
        sol = lmi.solve(p)
        assert sol.status == "infeasible"
        assert sol.info["best_margin"] == pytest.approx(-0.5, abs=1e-3)

    def test_unbounded_margin_raises(self):
        p = lmi.LmiProblem(dim=1,
                           blocks=[lmi.AffineBlock(np.array([[0.0]]),
                                                   np.array([[[1.0]]]))])
        with pytest.raises(UnboundedMarginError, match="normalization"):
            lmi.solve(p)

    def test_feasibility_objective(self):
        p = scalar_family_problem()
        p.objective = lmi.FEASIBILITY
        sol = lmi.solve(p)
        assert sol.status == "feasible"
        assert sol.margin >= 1e-7


class TestAssembleMargin:
    def test_all_zero_problem(self):
        p = lmi.LmiProblem(dim=1,
                           blocks=[lmi.AffineBlock(np.zeros((2, 2)),
                                                   np.zeros((1, 2, 2)))])
        assert lmi.assemble_margin(p, [0.0]) == 0.0

    def test_scalar_family_at_hand_optimum(self):
        assert lmi.assemble_margin(scalar_family_problem(),
                                   [10.0, -20.0]) == pytest.approx(10.0)

    def test_against_characteristic_polynomial_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            M = rng.normal(size=(3, 3))
            C = 0.5 * (M + M.T)
            p = lmi.LmiProblem(dim=0, blocks=[lmi.AffineBlock(C, np.zeros((0, 3, 3)))])
            assert lmi.assemble_margin(p, []) == pytest.approx(
                char_poly_min_eig(C), abs=1e-8)


class TestSoundnessAndProperties:
    def test_soundness_on_random_feasible_problems(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            prob, _ = random_feasible_problem(rng)
            sol = lmi.solve(prob)
            assert sol.status != "infeasible"
            assert lmi.assemble_margin(prob, sol.z) >= sol.margin - 1e-8

    def test_adding_a_block_never_improves_margin(self):
        rng = np.random.default_rng(43)
        for _ in range(8):
            prob, z_star = random_feasible_problem(rng)
            base = lmi.solve(prob).margin
            s = 2
            A = rng.normal(size=(prob.dim, s, s))
            A = 0.5 * (A + A.transpose(0, 2, 1))
            D = rng.normal(size=(s, s))
            C = D @ D.T + 0.1 * np.eye(s) - np.tensordot(z_star, A, axes=(0, 0))
            bigger = lmi.LmiProblem(dim=prob.dim,
                                    blocks=prob.blocks + [lmi.AffineBlock(C, A)],
                                    lower=prob.lower, upper=prob.upper)
            assert lmi.solve(bigger).margin <= base + 1e-6

    def test_margin_scales_with_problem_data(self):
        rng = np.random.default_rng(44)
        prob, _ = random_feasible_problem(rng)
        sol = lmi.solve(prob)
        s = 3.7
        scaled = lmi.LmiProblem(
            dim=prob.dim,
            blocks=[lmi.AffineBlock(s * b.const, s * b.coeffs) for b in prob.blocks],
            lower=prob.lower, upper=prob.upper)
        sol_s = lmi.solve(scaled)
        assert sol_s.margin == pytest.approx(s * sol.margin, rel=1e-3)
        np.testing.assert_allclose(sol_s.z, sol.z, atol=2e-3)

    def test_reported_margin_equals_recomputation(self):
        rng = np.random.default_rng(45)
        for _ in range(10):
            prob, _ = random_feasible_problem(rng)
            sol = lmi.solve(prob)
            assert sol.margin == pytest.approx(
                lmi.assemble_margin(prob, sol.z), abs=1e-8)

    def test_deterministic_given_identical_input(self):
        prob1, _ = random_feasible_problem(np.random.default_rng(46))
        prob2, _ = random_feasible_problem(np.random.default_rng(46))
        s1 = lmi.solve(prob1)
        s2 = lmi.solve(prob2)
        np.testing.assert_array_equal(s1.z, s2.z)
        assert s1.margin == s2.margin


class TestValidationAndDump:
    def test_empty_blocks_rejected(self):
        with pytest.raises(DataError):
            lmi.LmiProblem(dim=1, blocks=[]).validate()

    def test_non_finite_blocks_rejected(self):
        blk = lmi.AffineBlock(np.array([[np.nan]]), np.array([[[1.0]]]))
        with pytest.raises(DataError, match="non-finite"):
            lmi.LmiProblem(dim=1, blocks=[blk]).validate()

    def test_asymmetric_const_rejected(self):
        blk = lmi.AffineBlock(np.array([[0.0, 1.0], [0.0, 0.0]]),
                              np.zeros((1, 2, 2)))
        with pytest.raises(DataError, match="symmetric"):
            lmi.LmiProblem(dim=1, blocks=[blk]).validate()

    def test_dump_round_trips_through_json(self, tmp_path):
        import json

        prob = scalar_family_problem()
        path = tmp_path / "problem.json"
        lmi.dump_problem(prob, path)
        data = json.loads(path.read_text())
        assert data["dim"] == 2
        np.testing.assert_allclose(np.asarray(data["blocks"][0]["coeffs"]),
                                   prob.blocks[0].coeffs)
