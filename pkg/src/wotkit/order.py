"""Convex order, nondegeneracy and irreducibility probes, and the weighted median."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, Infeasible
from .measures import Coupling, DiscreteMeasure
from .oracle import LpProblem, martingale_constraints, solve_lp

MEAN_TOL = 1e-10
CALL_TOL = 1e-10


@dataclass(frozen=True)
class OrderReport:
    convex_order: bool
    mean_gap: float
    worst_test_point: float
    margin: float

    def as_dict(self) -> dict:
        return {
            "convex_order": self.convex_order,
            "mean_gap": self.mean_gap,
            "worst_test_point": self.worst_test_point,
            "margin": self.margin,
        }


def _calls(x, w, strikes):
    return np.maximum(x[None, :] - strikes[:, None], 0.0) @ w


def convex_order_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> OrderReport:
    """Check mu <=cvx nu on the line.

    Equal means plus ordered call prices at every support point of either
    measure is sufficient for discrete measures, since both call curves are
    piecewise linear with kinks only at those points. ``margin`` is the
    smallest ``E_nu (X - k)+ - E_mu (X - k)+`` over the strikes.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionError("convex order check is one-dimensional")
    x, y = mu.line(), nu.line()
    strikes = np.union1d(x, y)
    diff = _calls(y, nu.weights, strikes) - _calls(x, mu.weights, strikes)
    k = int(np.argmin(diff))
    mean_gap = float(nu.weights @ y - mu.weights @ x)
    margin = float(diff[k])
    ok = abs(mean_gap) <= MEAN_TOL and margin >= -CALL_TOL
    return OrderReport(ok, mean_gap, float(strikes[k]), margin)


@dataclass(frozen=True)
class NondegeneracyReport:
    ok: bool
    distance: float


def _hull_2d(pts: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (monotone chain), collinear points dropped."""
    P = sorted(set(map(tuple, pts)))
    if len(P) <= 2:
        return np.array(P)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in P:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(P):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def nondegeneracy_check(mu: DiscreteMeasure, nu: DiscreteMeasure) -> NondegeneracyReport:
    """Is supp(mu) inside the interior of the convex hull of supp(nu)?

    ``distance`` is the smallest signed distance from a mu-atom to the hull
    boundary; it is negative for atoms outside the hull and 0 for atoms on it.
    """
    if mu.dim != nu.dim:
        raise DimensionError("mu and nu have different dimensions")
    if mu.dim == 1:
        lo, hi = nu.line().min(), nu.line().max()
        x = mu.line()
        dist = float(np.min(np.minimum(x - lo, hi - x)))
    elif mu.dim == 2:
        hull = _hull_2d(nu.points)
        if len(hull) < 3:
            return NondegeneracyReport(False, 0.0)
        a, b = hull, np.roll(hull, -1, axis=0)
        edge = b - a
        normal = np.column_stack([-edge[:, 1], edge[:, 0]])
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        # inward normals for a counter-clockwise hull
        signed = np.einsum("pek,ek->pe", mu.points[:, None, :] - a[None, :, :], normal)
        dist = float(np.min(signed))
    else:
        raise DimensionError("nondegeneracy check supports d = 1 or d = 2")
    return NondegeneracyReport(dist > 1e-12, dist)


@dataclass(frozen=True)
class IrreducibilityReport:
    feasible: bool
    witness: Optional[Coupling]


def irreducibility_probe(
    mu: DiscreteMeasure, nu: DiscreteMeasure, floor: float
) -> IrreducibilityReport:
    """Look for a martingale coupling with ``pi_ij >= floor * mu_i * nu_j`` everywhere.

    A uniform density floor stands in for the equivalence of every
    conditional law with nu, which is not expressible as an LP.
    """
    if not 0.0 <= floor < 1.0:
        raise ValueError(f"floor must lie in [0, 1), got {floor}")
    A, b = martingale_constraints(mu, nu)
    lower = floor * np.outer(mu.weights, nu.weights).ravel()
    try:
        res = solve_lp(LpProblem(np.zeros(A.shape[1]), A, b, lower))
    except Infeasible:
        return IrreducibilityReport(False, None)
    return IrreducibilityReport(True, Coupling(mu, nu, res.x.reshape(mu.size, nu.size)))


@dataclass(frozen=True)
class MedianResult:
    a: np.ndarray
    l1_value: float


def median(alpha, weights) -> MedianResult:
    """Coordinatewise weighted median, taking the lowest minimiser on ties.

    Minimises ``sum_i w_i sum_k |alpha_ik - a_k|``; for one column this is the
    usual weighted L1 median.
    """
    al = np.asarray(alpha, dtype=float)
    if al.ndim == 1:
        al = al[:, None]
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != al.shape[0]:
        raise ValueError("one weight per row of alpha is required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    a = np.empty(al.shape[1])
    for k in range(al.shape[1]):
        order = np.argsort(al[:, k], kind="stable")
        cum = np.cumsum(w[order])
        a[k] = al[order[np.searchsorted(cum, 0.5 - 1e-12)], k]
    value = float(w @ np.abs(al - a[None, :]).sum(axis=1))
    return MedianResult(a, value)
