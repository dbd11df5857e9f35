import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from wotkit.errors import IllConditioned, Infeasible, NotConverged, SizeLimit
from wotkit.experiments import random_convex_ordered_pair
from wotkit.measures import DiscreteMeasure
from wotkit.model import GroundCost
from wotkit.oracle import (
    LpProblem,
    martingale_constraints,
    reference_sinkhorn,
    solve_lp,
    solve_martingale_lp,
    unregularized_value_extrapolation,
)


def brute_force_value(mu, nu, cost):
    """Minimum over all basic feasible solutions of the martingale system."""
    A, b = martingale_constraints(mu, nu)
    # keep a maximal independent set of rows
    rows = []
    for r in range(A.shape[0]):
        if np.linalg.matrix_rank(A[rows + [r]]) > len(rows):
            rows.append(r)
    A, b = A[rows], b[rows]
    m, n = A.shape
    c = cost.ravel()
    best = math.inf
    for cols in itertools.combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, b)
        if np.all(xb >= -1e-11):
            best = min(best, float(c[list(cols)] @ xb))
    return best


def test_two_point_value(two_point):
    mu, nu = two_point
    res = solve_martingale_lp(mu, nu, GroundCost.squared_euclidean(mu, nu))
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(res.plan.matrix, [[0.5, 0.5]])


def test_identity_plan_for_equal_marginals(rng):
    mu = DiscreteMeasure(rng.normal(size=4), rng.uniform(0.2, 1, 4))
    res = solve_martingale_lp(mu, mu, GroundCost.squared_euclidean(mu, mu))
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(res.plan.matrix, np.diag(mu.weights), atol=1e-12)


@pytest.mark.parametrize("shape", [(3, 4), (3, 5), (4, 4)])
def test_matches_vertex_enumeration(rng, shape):
    for _ in range(3):
        mu, nu = random_convex_ordered_pair(*shape, rng)
        cost = GroundCost.euclidean(mu, nu).matrix
        res = solve_martingale_lp(mu, nu, cost)
        assert res.value == pytest.approx(brute_force_value(mu, nu, cost), abs=1e-9)
        assert res.dual_residual <= 1e-9
        assert res.dual_value == pytest.approx(res.value, abs=1e-9)


@pytest.mark.parametrize("shape", [(4, 6), (6, 8), (8, 12)])
def test_matches_scipy_linprog(rng, shape):
    mu, nu = random_convex_ordered_pair(*shape, rng)
    cost = rng.uniform(size=shape)
    res = solve_martingale_lp(mu, nu, cost)
    A, b = martingale_constraints(mu, nu)
    ref = linprog(cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert res.value == pytest.approx(ref.fun, abs=1e-9)
    assert res.plan.marginal_residual() <= 1e-12
    mart = (res.plan.matrix * (nu.line()[None, :] - mu.line()[:, None])).sum(1)
    assert np.max(np.abs(mart)) <= 1e-12


def test_lower_bounds_and_duality(rng):
    A = rng.uniform(size=(3, 7))
    x0 = rng.uniform(0.5, 1.0, 7)
    b = A @ x0
    lower = np.full(7, 0.1)
    c = rng.uniform(-1, 1, 7)
    ub = [(0.1, 5.0)] * 7
    # box the reference problem well away from the optimum to keep it bounded
    ref = linprog(c, A_eq=A, b_eq=b, bounds=ub, method="highs")
    try:
        res = solve_lp(LpProblem(c, A, b, lower))
    except ValueError:
        pytest.skip("random instance unbounded without the box")
    if np.all(res.x < 4.9):
        assert res.value == pytest.approx(ref.fun, abs=1e-9)
    assert np.all(res.x >= lower - 1e-12)
    assert res.dual_value == pytest.approx(res.value, abs=1e-9)
    assert res.dual_residual <= 1e-9


def test_infeasible_pair():
    mu = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
    nu = DiscreteMeasure.dirac([0.0])
    with pytest.raises(Infeasible):
        solve_martingale_lp(mu, nu, np.zeros((2, 1)))


def test_size_cap(rng):
    mu = DiscreteMeasure.uniform(rng.normal(size=21))
    with pytest.raises(SizeLimit):
        solve_martingale_lp(mu, mu, np.zeros((21, 21)))


def test_reference_sinkhorn_zero_cost(rng):
    mu = DiscreteMeasure(rng.normal(size=3), rng.uniform(0.2, 1, 3))
    nu = DiscreteMeasure(rng.normal(size=5), rng.uniform(0.2, 1, 5))
    pi = reference_sinkhorn(mu, nu, np.zeros((3, 5)), 0.1)
    assert np.allclose(pi.matrix, np.outer(mu.weights, nu.weights), atol=1e-14)


def test_reference_sinkhorn_symmetric(rng):
    mu = DiscreteMeasure(rng.normal(size=6), rng.uniform(0.2, 1, 6))
    C = GroundCost.squared_euclidean(mu, mu)
    pi = reference_sinkhorn(mu, mu, C, 0.2)
    assert np.allclose(pi.matrix, pi.matrix.T, atol=1e-12)


def test_reference_sinkhorn_cap(rng):
    mu = DiscreteMeasure(rng.normal(size=6), rng.uniform(0.2, 1, 6))
    with pytest.raises(NotConverged):
        reference_sinkhorn(mu, mu, GroundCost.squared_euclidean(mu, mu), 0.01, max_iter=2)


def test_extrapolation_recovers_model():
    eps = np.array([0.1, 0.05, 0.01])
    fit = unregularized_value_extrapolation(list(zip(eps, 2 + 3 * eps * np.log(1 / eps))))
    assert fit.v0_estimate == pytest.approx(2.0, abs=1e-9)
    assert fit.slope == pytest.approx(3.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)
    flat = unregularized_value_extrapolation([(e, 1.5) for e in eps])
    assert flat.slope == pytest.approx(0.0, abs=1e-12) and flat.v0_estimate == pytest.approx(1.5)


def test_extrapolation_needs_a_decade():
    with pytest.raises(IllConditioned):
        unregularized_value_extrapolation([(0.1, 1.0), (0.05, 1.0), (0.02, 1.0)])
    with pytest.raises(IllConditioned):
        unregularized_value_extrapolation([(0.1, 1.0), (0.01, 1.0)])
