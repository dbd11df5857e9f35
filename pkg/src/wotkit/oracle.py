"""Exact references for tiny instances.

A dense two-phase tableau simplex (Bland's rule) solves martingale transport
linear programs, a log-domain Sinkhorn written independently of the SISTA
solver serves as the entropic reference, and a small least-squares fit
extrapolates entropic values to epsilon = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import IllConditioned, Infeasible, NotConverged, SizeLimit
from .measures import Coupling, DiscreteMeasure

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
MAX_VARIABLES = 400


@dataclass(frozen=True)
class LpProblem:
    """``min c.x`` subject to ``A x = b`` and ``x >= lower``."""

    objective: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    lower: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        a = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if a.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix {a.shape} vs rhs {b.size} and objective {c.size}")
        if not np.all(np.isfinite(b)):
            raise ValueError("rhs must be finite")
        lo = np.zeros(c.size) if self.lower is None else np.asarray(self.lower, float).ravel()
        if lo.size != c.size:
            raise ValueError("lower bounds do not match the number of variables")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "a_eq", a)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "lower", lo)


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    value: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    dual_residual: float
    dual_value: float
    basis: tuple
    pivots: int


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _simplex_phase(T, basis, n_cols, max_pivots):
    """Bland's-rule pivoting on tableau ``T`` whose last row is the reduced objective."""
    pivots = 0
    m = T.shape[0] - 1
    while True:
        obj = T[-1, :n_cols]
        entering = np.flatnonzero(obj < -PIVOT_TOL)
        if entering.size == 0:
            return pivots
        j = int(entering[0])
        col = T[:m, j]
        cand = np.flatnonzero(col > PIVOT_TOL)
        if cand.size == 0:
            raise ValueError("linear program is unbounded")
        ratios = T[cand, -1] / col[cand]
        best = ratios.min()
        ties = cand[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, r, j)
        basis[r] = j
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit exceeded")


def solve_lp(problem: LpProblem) -> LpResult:
    """Two-phase dense tableau simplex with Bland's anti-cycling rule.

    Raises ``Infeasible`` when phase one leaves artificial mass above
    ``FEAS_TOL`` and ``SizeLimit`` beyond ``MAX_VARIABLES`` variables.
    """
    c, A, lo = problem.objective, problem.a_eq, problem.lower
    m, n = A.shape
    if n > MAX_VARIABLES:
        raise SizeLimit(f"{n} variables exceeds the oracle cap of {MAX_VARIABLES}")
    b = problem.b_eq - A @ lo
    sign = np.where(b < 0, -1.0, 1.0)
    As, bs = A * sign[:, None], b * sign

    # phase one: columns [x | artificials | rhs]
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = As
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = bs
    T[-1, :n] = -As.sum(axis=0)
    T[-1, -1] = -bs.sum()
    basis = list(range(n, n + m))
    max_pivots = 50 * (n + m) ** 2
    pivots = _simplex_phase(T, basis, n + m, max_pivots)
    if -T[-1, -1] > FEAS_TOL:
        raise Infeasible(f"phase one residual {-T[-1, -1]:.3e} exceeds {FEAS_TOL:.0e}")

    # drive artificials out of the basis; rows where that fails are redundant
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if cand.size:
                _pivot(T, r, int(cand[0]))
                basis[r] = int(cand[0])
                pivots += 1
            else:
                continue
        keep.append(r)
    T = np.vstack([T[keep][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    basis = [basis[r] for r in keep]
    # phase two objective row: c - c_B B^-1 A
    T[-1, :n] = c
    T[-1, -1] = 0.0
    for k, j in enumerate(basis):
        T[-1] -= c[j] * T[k]
    pivots += _simplex_phase(T, basis, n, max_pivots)

    x = np.zeros(n)
    x[basis] = T[:-1, -1]
    x = np.maximum(x, 0.0) + lo
    # B^T y = c_B is consistent but has redundant equations when A lacks
    # full row rank; any solution gives the same reduced costs
    duals = np.linalg.lstsq(A[:, basis].T, c[basis], rcond=None)[0]
    reduced = c - A.T @ duals
    dual_residual = float(max(0.0, -reduced.min()))
    value = float(c @ x)
    dual_obj = float(problem.b_eq @ duals + reduced @ lo)
    return LpResult(x, value, duals, reduced, dual_residual, dual_obj, tuple(basis), pivots)


def martingale_constraints(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Equality system for couplings of (mu, nu) with ``sum_j pi_ij (y_j - x_i) = 0``."""
    nx, ny, d = mu.size, nu.size, mu.dim
    rows = []
    rhs = []
    for i in range(nx):
        r = np.zeros((nx, ny))
        r[i] = 1.0
        rows.append(r.ravel())
        rhs.append(mu.weights[i])
    for j in range(ny):
        r = np.zeros((nx, ny))
        r[:, j] = 1.0
        rows.append(r.ravel())
        rhs.append(nu.weights[j])
    for i in range(nx):
        for k in range(d):
            r = np.zeros((nx, ny))
            r[i] = nu.points[:, k] - mu.points[i, k]
            rows.append(r.ravel())
            rhs.append(0.0)
    return np.array(rows), np.array(rhs)


@dataclass(frozen=True)
class MartingaleLpResult:
    value: float
    plan: Coupling
    dual_residual: float
    dual_value: float


def solve_martingale_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> MartingaleLpResult:
    """Exact martingale optimal transport value and an optimal vertex plan."""
    cost = np.asarray(getattr(cost, "matrix", cost), dtype=float)
    if mu.size * nu.size > MAX_VARIABLES:
        raise SizeLimit(f"{mu.size}x{nu.size} exceeds the oracle cap of {MAX_VARIABLES}")
    A, b = martingale_constraints(mu, nu)
    res = solve_lp(LpProblem(cost.ravel(), A, b))
    plan = Coupling(mu, nu, res.x.reshape(mu.size, nu.size))
    return MartingaleLpResult(res.value, plan, res.dual_residual, res.dual_value)


def reference_sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost,
    epsilon: float,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> Coupling:
    """Plain log-domain Sinkhorn for ``min <C, P> + epsilon KL(P | mu x nu)``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    C = np.asarray(getattr(cost, "matrix", cost), dtype=float)
    a, b = mu.weights, nu.weights
    with np.errstate(divide="ignore"):
        loga, logb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    for _ in range(max_iter):
        f = -epsilon * logsumexp((g[None, :] - C) / epsilon + logb[None, :], axis=1)
        g = -epsilon * logsumexp((f[:, None] - C) / epsilon + loga[:, None], axis=0)
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon + loga[:, None] + logb[None, :])
        if np.abs(P.sum(axis=1) - a).max() <= tol:
            return Coupling(mu, nu, P)
    raise NotConverged(f"reference Sinkhorn did not reach {tol:.1e} in {max_iter} sweeps")


@dataclass(frozen=True)
class Extrapolation:
    v0_estimate: float
    slope: float
    r_squared: float


def unregularized_value_extrapolation(values: Sequence) -> Extrapolation:
    """Least-squares fit of ``value(eps) = v0 + C eps ln(1/eps)``.

    ``values`` is a sequence of ``(epsilon, value)`` pairs with at least three
    distinct epsilons spanning a decade or more.
    """
    data = np.asarray(values, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("values must be (epsilon, value) pairs")
    eps, v = data[:, 0], data[:, 1]
    if np.unique(eps).size < 3:
        raise IllConditioned("need at least three distinct epsilon values")
    if np.any(eps <= 0):
        raise ValueError("epsilon values must be positive")
    if eps.max() / eps.min() < 10.0 * (1 - 1e-9):
        raise IllConditioned("epsilon values span less than one decade")
    X = np.column_stack([np.ones_like(eps), eps * np.log(1.0 / eps)])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    resid = v - X @ coef
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return Extrapolation(float(coef[0]), float(coef[1]), r2)
