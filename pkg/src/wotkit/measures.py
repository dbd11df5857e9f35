"""Discrete probability measures, couplings and 1D transport distances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, MarginalMismatch, ShapeError, ZeroMassRow

COORD_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _merge_duplicates(points: np.ndarray, weights: np.ndarray, tol: float):
    n = points.shape[0]
    owner = np.full(n, -1)
    keep = []
    for i in range(n):
        if owner[i] >= 0:
            continue
        close = np.max(np.abs(points - points[i]), axis=1) <= tol
        close &= owner < 0
        owner[close] = len(keep)
        keep.append(i)
    if len(keep) == n:
        return points, weights
    merged = np.zeros(len(keep))
    np.add.at(merged, owner, weights)
    return points[keep], merged


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud in R^d.

    Weights are renormalised to sum to one and duplicate points (equal up to
    ``COORD_TOL`` in every coordinate) are merged by adding their weights.
    A one-dimensional ``points`` array is read as ``n`` points on the line.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ShapeError(f"points must be (n, d), got shape {pts.shape}")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ShapeError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] == 0:
            raise ShapeError("empty measure")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        pts, w = _merge_duplicates(pts, w, COORD_TOL)
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w / w.sum()))

    @classmethod
    def uniform(cls, points) -> DiscreteMeasure:
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.ones(pts.shape[0]))

    @classmethod
    def dirac(cls, point) -> DiscreteMeasure:
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), [1.0])

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def diam_inf(self) -> float:
        """Diameter of the support for the sup norm."""
        return float(np.max(self.points.max(axis=0) - self.points.min(axis=0)))

    def line(self) -> np.ndarray:
        """Coordinates of a one-dimensional measure as a flat array."""
        if self.dim != 1:
            raise DimensionError(f"expected d = 1, got d = {self.dim}")
        return self.points[:, 0]


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint matrix on ``row_measure.points x col_measure.points``.

    Only shape, finiteness and nonnegativity are enforced here; how closely
    the marginals match is a property of the operation that produced the
    matrix (see ``marginal_residual``).
    """

    row_measure: DiscreteMeasure
    col_measure: DiscreteMeasure
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        shape = (self.row_measure.size, self.col_measure.size)
        if m.shape != shape:
            raise ShapeError(f"coupling matrix has shape {m.shape}, expected {shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("coupling matrix must be finite")
        if np.any(m < 0):
            raise ValueError("coupling entries must be nonnegative")
        object.__setattr__(self, "matrix", _readonly(m))

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
        return cls(mu, nu, np.outer(mu.weights, nu.weights))

    @property
    def mass(self) -> float:
        return float(self.matrix.sum())

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def marginal_residual(self) -> float:
        """Largest absolute deviation of either marginal from its target."""
        r = np.abs(self.row_sums() - self.row_measure.weights).max()
        c = np.abs(self.col_sums() - self.col_measure.weights).max()
        return float(max(r, c))

    def require_marginals(self, tol: float) -> None:
        res = self.marginal_residual()
        if res > tol:
            raise MarginalMismatch(f"marginal residual {res:.3e} exceeds {tol:.1e}")

    def disintegrate(self, i: int) -> DiscreteMeasure:
        return disintegrate(self, i)


def disintegrate(pi: Coupling, i: int) -> DiscreteMeasure:
    """Conditional law of the second coordinate given row ``i``."""
    row = pi.matrix[i]
    mu_i = pi.row_measure.weights[i]
    if mu_i <= 0 or row.sum() <= 0:
        raise ZeroMassRow(f"row {i} has no mass")
    return DiscreteMeasure(pi.col_measure.points, row / mu_i)


def relative_entropy(pi: Coupling) -> float:
    """H(pi | mu x nu) with the convention 0 ln 0 = 0.

    Returns ``math.inf`` (set explicitly, never through overflow) when ``pi``
    charges a cell where the reference product vanishes.
    """
    ref = np.outer(pi.row_measure.weights, pi.col_measure.weights)
    p = pi.matrix
    charged = p > 0
    if np.any(charged & (ref <= 0)):
        return math.inf
    val = float(np.sum(p[charged] * np.log(p[charged] / ref[charged])))
    # rounding can leave a tiny negative value at the product coupling
    return max(val, 0.0) if abs(pi.mass - 1.0) < 1e-10 else val


def _sorted_line(p: DiscreteMeasure):
    x = p.line()
    order = np.argsort(x, kind="stable")
    return x[order], p.weights[order]


def w1_distance_1d(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    """W1 on the line as the integral of |F_p - F_q|."""
    xp, wp = _sorted_line(p)
    xq, wq = _sorted_line(q)
    grid = np.union1d(xp, xq)
    idx_p = np.searchsorted(xp, grid, side="right")
    cdf_p = np.where(idx_p == 0, 0.0, np.cumsum(wp)[idx_p - 1])
    idx_q = np.searchsorted(xq, grid, side="right")
    cdf_q = np.where(idx_q == 0, 0.0, np.cumsum(wq)[idx_q - 1])
    return float(np.sum(np.abs(cdf_p - cdf_q)[:-1] * np.diff(grid)))


def w_infinity_distance_1d(
    p: DiscreteMeasure, q: DiscreteMeasure, level_tol: float = 1e-12
) -> float:
    """W-infinity on the line: sup of |quantile_p - quantile_q| over levels.

    Level intervals shorter than ``level_tol`` are ignored so that cumulative
    sums agreeing up to rounding do not create spurious slivers.
    """
    xp, wp = _sorted_line(p)
    xq, wq = _sorted_line(q)
    cp = np.cumsum(wp)
    cq = np.cumsum(wq)
    cp[-1] = cq[-1] = 1.0
    levels = np.union1d(cp, cq)
    lo = np.concatenate([[0.0], levels[:-1]])
    keep = (levels - lo) > level_tol
    mid = 0.5 * (lo + levels)[keep]
    if mid.size == 0:
        return 0.0
    ip = np.minimum(np.searchsorted(cp, mid, side="left"), len(xp) - 1)
    iq = np.minimum(np.searchsorted(cq, mid, side="left"), len(xq) - 1)
    return float(np.max(np.abs(xp[ip] - xq[iq])))


def load_measure_csv(path) -> DiscreteMeasure:
    """Read a measure from CSV: header line, then ``x_1, ..., x_d, weight`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one point")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one coordinate column and a weight")
    return DiscreteMeasure(data[:, :-1], data[:, -1])


def save_measure_csv(measure: DiscreteMeasure, path) -> None:
    d = measure.dim
    header = [f"x{k}" for k in range(d)] + ["weight"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for pt, wt in zip(measure.points, measure.weights):
            w.writerow([repr(float(v)) for v in pt] + [repr(float(wt))])
