import numpy as np
import pytest

from legpress.qpsolve import QpProblem, QpSolution, QpSolver, kkt_residual, solve

from oracle_qp import enumerate_qp, random_strictly_convex_qp


def test_unconstrained_min_norm_is_zero():
    p = QpProblem(np.eye(3), np.zeros(3))
    s = solve(p)
    assert s.status == "optimal"
    assert np.max(np.abs(s.primal)) < 1e-8


def test_active_bound_scalar():
    # min (u-1)^2 s.t. u <= 0.5  ->  u = 0.5
    p = QpProblem([[2.0]], [-2.0], C=[[1.0]], c_lo=[-np.inf], c_hi=[0.5])
    s = solve(p)
    assert s.status == "optimal"
    assert abs(s.primal[0] - 0.5) < 1e-6


def test_equality_rows_exact():
    rng = np.random.default_rng(11)
    H = np.eye(4)
    g = rng.normal(size=4)
    D = rng.normal(size=(2, 4))
    s = solve(QpProblem(H, g, D=D), tol=1e-9)
    assert s.status == "optimal"
    assert np.max(np.abs(D @ s.primal)) < 1e-8


def test_matches_enumeration_oracle_small_suite():
    rng = np.random.default_rng(12)
    for _ in range(60):
        H, g, C, hi, D = random_strictly_convex_qp(rng, n_max=6, m_max=8)
        x_star, _ = enumerate_qp(H, g, C, hi, D)
        assert x_star is not None
        p = QpProblem(H, g, C=C, c_lo=np.full(len(hi), -np.inf), c_hi=hi, D=D)
        s = solve(p, tol=1e-8)
        assert s.status == "optimal"
        assert np.max(np.abs(s.primal - x_star)) < 1e-6


def test_kkt_residual_exact_solution_tiny():
    # min (u-1)^2 s.t. u <= 0.5: analytic optimum u=0.5, dual y=1
    p = QpProblem([[2.0]], [-2.0], C=[[1.0]], c_lo=[-np.inf], c_hi=[0.5])
    s = QpSolution(np.array([0.5]), np.array([1.0]), "optimal", 0.0)
    assert kkt_residual(p, s) < 1e-12


def test_kkt_residual_detects_perturbation():
    p = QpProblem([[2.0]], [-2.0], C=[[1.0]], c_lo=[-np.inf], c_hi=[0.5])
    s = QpSolution(np.array([0.6]), np.array([1.0]), "optimal", 0.0)
    assert kkt_residual(p, s) >= 0.01


def test_kkt_residual_small_on_oracle_solutions():
    rng = np.random.default_rng(13)
    for _ in range(20):
        H, g, C, hi, D = random_strictly_convex_qp(rng, n_max=5, m_max=6)
        p = QpProblem(H, g, C=C, c_lo=np.full(len(hi), -np.inf), c_hi=hi, D=D)
        s = solve(p, tol=1e-9, max_iter=20000)
        assert s.status == "optimal"
        assert kkt_residual(p, s) < 1e-8


def test_no_false_optimality_against_feasible_sampler():
    rng = np.random.default_rng(14)
    H, g, C, hi, D = random_strictly_convex_qp(rng, n_max=6, m_max=8)
    p = QpProblem(H, g, C=C, c_lo=np.full(len(hi), -np.inf), c_hi=hi, D=D)
    s = solve(p, tol=1e-8)
    obj = p.objective(s.primal)
    count = 0
    while count < 1000:
        x = rng.normal(size=p.n, scale=2.0)
        if D is not None and len(D) and np.max(np.abs(D @ x)) > 1e-9:
            x = x - np.linalg.lstsq(D, D @ x, rcond=None)[0]
        if len(C) and np.any(C @ x > hi):
            continue
        count += 1
        assert p.objective(x) >= obj - 1e-6


def test_warm_start_not_worse_than_cold():
    rng = np.random.default_rng(15)
    H, g, C, hi, D = random_strictly_convex_qp(rng, n_max=6, m_max=8)
    p = QpProblem(H, g, C=C, c_lo=np.full(len(hi), -np.inf), c_hi=hi, D=D)
    solver = QpSolver()
    cold = solver.solve(p, tol=1e-8)
    warm = solver.solve(p, tol=1e-8)
    assert p.objective(warm.primal) <= p.objective(cold.primal) + 1e-8
    assert warm.iterations <= cold.iterations


def test_deterministic_given_identical_inputs():
    rng = np.random.default_rng(16)
    H, g, C, hi, D = random_strictly_convex_qp(rng, n_max=6, m_max=8)
    p = QpProblem(H, g, C=C, c_lo=np.full(len(hi), -np.inf), c_hi=hi, D=D)
    a = solve(p)
    b = solve(p)
    assert np.array_equal(a.primal, b.primal)
    assert a.iterations == b.iterations


def test_infeasible_detected():
    # x <= -1 and x >= +1 simultaneously
    p = QpProblem([[2.0]], [0.0], C=[[1.0], [-1.0]], c_lo=[-np.inf, -np.inf], c_hi=[-1.0, -1.0])
    s = solve(p, max_iter=200000)
    assert s.status == "infeasible"


def test_rejects_asymmetric_hessian():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


def test_rejects_crossed_bounds():
    with pytest.raises(ValueError):
        QpProblem(np.eye(1), [0.0], C=[[1.0]], c_lo=[1.0], c_hi=[0.0])
