import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from terminal_embed.errors import DimensionError, DomainError, InfeasibleError
from terminal_embed.geometry import PointSet
from terminal_embed.jl import JLMatrix, hull_distortion_estimate, sample_jl
from terminal_embed.reference import reference_solve
from terminal_embed.solver import (Objective, PiConvention, SolverConfig, TerminalModel,
                                   constraint_violation, embed_batch, embed_point,
                                   extension_objective, nearest_train_point, solve_extension)


def random_model(seed, N=6, m=3, n=5, **cfg):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, N))
    return TerminalModel(PointSet(X), sample_jl(m, N, seed), SolverConfig(**cfg)), rng


def line_model(objective=Objective.QUADRATIC):
    # X = {0} in R^2, phi = [1, 0]
    return TerminalModel(PointSet(np.zeros((1, 2))), JLMatrix(np.array([[1.0, 0.0]])),
                         SolverConfig(objective=objective))


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(eps=0), dict(eps=1), dict(tol_feas=0), dict(tol_obj=-1),
                                     dict(relax_factor=1), dict(max_relax=-1), dict(admm_rho=0),
                                     dict(max_iter=0)])
    def test_invalid(self, bad):
        with pytest.raises(DomainError):
            SolverConfig(**bad)

    def test_enum_coercion(self):
        c = SolverConfig(objective="INNER_PROD", pi_convention="UNSCALED")
        assert c.objective is Objective.INNER_PROD and c.pi_convention is PiConvention.UNSCALED
        assert c.to_dict()["objective"] == "INNER_PROD"

    def test_model_dimension_check(self):
        with pytest.raises(DimensionError):
            TerminalModel(PointSet(np.zeros((2, 3))), sample_jl(2, 4, 0))

    def test_precomputed_images(self):
        model, _ = random_model(0)
        np.testing.assert_allclose(model.phi_images, model.X.points @ model.A.phi.T,
                                   rtol=0, atol=1e-12)


class TestNearest:
    def test_member(self):
        model, _ = random_model(1)
        assert nearest_train_point(model, model.X.points[3]) == (3, 0.0)

    def test_tie_lowest_index(self):
        model = TerminalModel(PointSet([[0.0, 0.0], [2.0, 0.0]]), sample_jl(1, 2, 0))
        assert nearest_train_point(model, [1.0, 0.0])[0] == 0

    def test_scan_oracle(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((100, 10))
        model = TerminalModel(PointSet(X), sample_jl(3, 10, 0))
        for y in rng.standard_normal((20, 10)):
            best, bestd = 0, math.inf
            for i, x in enumerate(X):
                d = math.dist(x, y)
                if d < bestd:
                    best, bestd = i, d
            idx, dist = nearest_train_point(model, y)
            assert idx == best and dist == pytest.approx(bestd, rel=1e-12)


class TestLineExamples:
    def test_orthogonal_query(self):
        r = solve_extension(line_model(), [0.0, 1.0])
        np.testing.assert_allclose(r.y_prime, [0.0], atol=1e-12)
        np.testing.assert_allclose(r.embedded, [0.0, 1.0], atol=1e-12)

    def test_aligned_query(self):
        # h(z) = z^2 + 2z on |z| <= 1 has its minimum at z = -1
        r = solve_extension(line_model(), [1.0, 0.0])
        np.testing.assert_allclose(r.y_prime, [-1.0], atol=1e-12)
        np.testing.assert_allclose(r.embedded, [-1.0, 0.0], atol=1e-12)
        assert np.linalg.norm(r.embedded) == pytest.approx(1.0, abs=1e-12)

    def test_inner_prod_aligned_query(self):
        # h(z) = <phi(0 - y), z> = -z on |z| <= 1 has its minimum at z = +1
        r = solve_extension(line_model(Objective.INNER_PROD), [1.0, 0.0])
        np.testing.assert_allclose(r.embedded, [1.0, 0.0], atol=1e-12)

    def test_bypass(self):
        r = solve_extension(line_model(Objective.LINEAR_BYPASS), [3.0, 4.0])
        # phi v = 3, ball radius 5: no projection needed
        np.testing.assert_allclose(r.y_prime, [3.0])
        np.testing.assert_allclose(r.embedded, [3.0, 4.0])


class TestMembership:
    @pytest.mark.parametrize("conv", ["SCALED", "UNSCALED"])
    def test_training_points_exact(self, conv):
        model, _ = random_model(3, pi_convention=conv)
        for i, x in enumerate(model.X.points):
            r = solve_extension(model, x)
            assert r.in_training_set and r.anchor_index == i
            assert np.array_equal(r.y_prime, np.zeros(model.m))
            assert np.array_equal(r.embedded[:-1], model.anchor_images[i]) and r.embedded[-1] == 0.0

    def test_duplicate_coordinates(self):
        X = np.array([[0.0, 1.0, 2.0], [1.0, 1.0, 1.0], [0.0, 1.0, 2.0]])
        model = TerminalModel(PointSet(X), sample_jl(2, 3, 1))
        r = solve_extension(model, X[2].copy())
        assert r.anchor_index == 0 and r.embedded[-1] == 0.0 and not r.y_prime.any()

    def test_near_member_goes_through_solver(self):
        model, _ = random_model(4)
        y = model.X.points[1] + 1e-9
        r = solve_extension(model, y)
        assert not r.in_training_set and r.anchor_index == 1


class TestCertificate:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.sampled_from(["QUADRATIC", "INNER_PROD"]),
           st.sampled_from(["SCALED", "UNSCALED"]))
    def test_constraints_hold(self, seed, objective, conv):
        model, rng = random_model(seed, N=8, m=6, n=10, eps=0.3, objective=objective,
                                  pi_convention=conv)
        y = rng.standard_normal(8)
        try:
            r = solve_extension(model, y)
        except InfeasibleError:
            return
        rad = nearest_train_point(model, y)[1]
        tol = model.config.tol_feas
        assert constraint_violation(model, y, r.y_prime, r.eps_used) <= tol
        assert np.linalg.norm(r.y_prime) <= rad + tol * rad
        assert r.embedded[-1] >= 0
        # norm composition identity
        base = np.append(model.anchor_images[r.anchor_index], 0.0)
        assert abs(np.sum((r.embedded - base) ** 2) - rad ** 2) <= 2 * tol * rad

    def test_relaxation_recorded(self):
        # m = 1 cannot satisfy tight slabs for many training points
        model, rng = random_model(7, N=10, m=1, n=30, eps=0.01, max_relax=6)
        relaxed = 0
        for y in rng.standard_normal((10, 10)):
            try:
                r = solve_extension(model, y)
            except InfeasibleError as exc:
                assert exc.best_residual > model.config.tol_feas
                assert exc.eps_used == pytest.approx(0.01 * 2 ** 6)
                continue
            assert r.eps_used == pytest.approx(0.01 * 2 ** r.relaxations)
            relaxed += r.relaxations > 0
        assert relaxed > 0

    def test_infeasible_raises_with_best(self):
        model, rng = random_model(8, N=10, m=1, n=40, eps=0.001, max_relax=0)
        with pytest.raises(InfeasibleError) as info:
            for y in rng.standard_normal((10, 10)):
                solve_extension(model, y)
        exc = info.value
        assert exc.eps_used == 0.001 and exc.best_y_prime is not None

    def test_feasible_under_hull_distortion(self):
        # phi with small empirical hull distortion on W_y: no relaxation needed
        rng = np.random.default_rng(11)
        X = rng.standard_normal((6, 5))
        A = sample_jl(600, 5, 3)
        for y in rng.standard_normal((5, 5)):
            a = int(np.argmin(np.linalg.norm(X - y, axis=1)))
            D = np.delete(X, a, axis=0) - X[a]
            W = D / np.linalg.norm(D, axis=1, keepdims=True)
            W = np.vstack([W, -W])
            est = hull_distortion_estimate(A, W, samples=2000, seed=1)
            eps = 6 * est * 1.05
            assert eps < 1
            model = TerminalModel(PointSet(X), A, SolverConfig(eps=eps, max_relax=0))
            r = solve_extension(model, y)
            assert r.relaxations == 0


class TestOracle:
    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("objective", ["QUADRATIC", "INNER_PROD"])
    def test_matches_reference(self, seed, objective):
        model, rng = random_model(100 + seed, eps=0.3, objective=objective)
        y = rng.standard_normal(6)
        r = solve_extension(model, y)
        ref = reference_solve(model, y, eps=r.eps_used,
                              cycles=10 ** 6 if objective == "QUADRATIC" else 10 ** 5)
        h_ref = extension_objective(model, y, ref)
        assert abs(r.objective - h_ref) <= 1e-4 * (1 + abs(h_ref))
        assert r.objective <= h_ref + 1e-4 * (1 + abs(h_ref))

    def test_reference_against_cvxpy(self):
        cp = pytest.importorskip("cvxpy")
        solved = 0
        for seed in range(6):
            model, rng = random_model(200 + seed, eps=0.3)
            y = rng.standard_normal(6)
            a = nearest_train_point(model, y)[0]
            xa = model.X.points[a]
            v = y - xa
            z = cp.Variable(model.m)
            cons = [cp.norm(z) <= np.linalg.norm(v)]
            for x in model.X.points:
                d = x - xa
                if np.linalg.norm(d) > 0:
                    cons.append(cp.abs(z @ (model.A.phi @ d) - v @ d)
                                <= 0.3 * np.linalg.norm(v) * np.linalg.norm(d))
            Mv = model.A.phi @ v
            prob = cp.Problem(cp.Minimize(cp.sum_squares(z) + 2 * Mv @ z), cons)
            prob.solve()
            if prob.status == "infeasible":
                with pytest.raises(InfeasibleError):
                    reference_solve(model, y, eps=0.3)
                continue
            ref = reference_solve(model, y, eps=0.3)
            h = extension_objective(model, y, ref)
            assert h == pytest.approx(prob.value, rel=1e-4, abs=1e-6)
            solved += 1
        assert solved >= 2

    def test_reference_ball_only(self):
        X = PointSet(np.zeros((1, 3)))
        A = sample_jl(2, 3, 5)
        model = TerminalModel(X, A, SolverConfig())
        y = np.array([0.3, -0.2, 0.1])
        Mv = A.phi @ y
        expect = -Mv if np.linalg.norm(Mv) <= np.linalg.norm(y) else -Mv * np.linalg.norm(y) / np.linalg.norm(Mv)
        np.testing.assert_allclose(reference_solve(model, y, cycles=10), expect, atol=1e-14)
        np.testing.assert_allclose(solve_extension(model, y).y_prime, expect, atol=1e-12)

    def test_reference_zero_radius(self):
        model, _ = random_model(1)
        assert not reference_solve(model, model.X.points[2], cycles=10).any()

    def test_reference_rejects_bypass(self):
        model, rng = random_model(1, objective="LINEAR_BYPASS")
        with pytest.raises(ValueError):
            reference_solve(model, rng.standard_normal(6), cycles=10)


class TestQuadraticIdentity:
    def test_rankings_agree(self):
        model, rng = random_model(9)
        y = rng.standard_normal(6)
        a = nearest_train_point(model, y)[0]
        Mv = model.A.phi @ (y - model.X.points[a])
        Z = rng.standard_normal((50, model.m))
        h = np.array([extension_objective(model, y, z) for z in Z])
        shifted = np.sum((Z + Mv) ** 2, axis=1)
        np.testing.assert_array_equal(np.argsort(h), np.argsort(shifted))
        np.testing.assert_allclose(h + Mv @ Mv, shifted, rtol=1e-12)


class TestBatch:
    def test_batch_equals_single_calls(self):
        model, rng = random_model(12, N=8, m=4, n=20)
        Q = rng.standard_normal((50, 8))
        batch = embed_batch(model, Q)
        for y, r in zip(Q, batch):
            assert np.array_equal(embed_point(model, y), r.embedded)

    def test_threads_do_not_change_results(self):
        model, rng = random_model(13, N=8, m=4, n=20)
        Q = rng.standard_normal((30, 8))
        a = np.array([r.embedded for r in embed_batch(model, Q, threads=1)])
        b = np.array([r.embedded for r in embed_batch(model, Q, threads=4)])
        assert np.array_equal(a, b)

    def test_permutation_equivariance(self):
        model, rng = random_model(14, N=8, m=4, n=20)
        Q = rng.standard_normal((15, 8))
        perm = rng.permutation(15)
        a = np.array([r.embedded for r in embed_batch(model, Q)])
        b = np.array([r.embedded for r in embed_batch(model, Q[perm])])
        assert np.array_equal(a[perm], b)

    def test_training_set_batch(self):
        model, _ = random_model(15)
        assert all(r.in_training_set for r in embed_batch(model, model.X))

    def test_failures_flagged_not_raised(self):
        model, rng = random_model(8, N=10, m=1, n=40, eps=0.001, max_relax=0)
        res = embed_batch(model, rng.standard_normal((10, 10)))
        failed = [r for r in res if r.failed]
        assert failed and all(r.error and r.embedded[-1] >= 0 for r in failed)

    def test_dimension_mismatch(self):
        model, _ = random_model(0)
        with pytest.raises(DimensionError):
            embed_batch(model, np.zeros((2, 5)))
