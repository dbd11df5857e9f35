"""Problem data for weak transport with a linear weak cost.

The weak cost is ``c(x, p) = sum_j cost(x, y_j) p_j``; its dual variable is
pinned to the ground cost matrix, so a problem is fully described by the two
marginals, the cost matrix, the soft and hard moment tensors and the convex
penalties applied to conditional moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ShapeError, ZeroMassRow
from .measures import Coupling, DiscreteMeasure, relative_entropy

MARGINAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class GroundCost:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ShapeError(f"cost must be a matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("cost entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def squared_euclidean(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> GroundCost:
        diff = mu.points[:, None, :] - nu.points[None, :, :]
        return cls(np.sum(diff**2, axis=-1))

    @classmethod
    def euclidean(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> GroundCost:
        diff = mu.points[:, None, :] - nu.points[None, :, :]
        return cls(np.sqrt(np.sum(diff**2, axis=-1)))

    @classmethod
    def zeros(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> GroundCost:
        return cls(np.zeros((mu.size, nu.size)))


@dataclass(frozen=True, eq=False)
class MomentTensor:
    """Values of a vector-valued moment map on the product support, shape (n_x, n_y, m)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ShapeError(f"moment tensor must be (n_x, n_y, m), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("moment tensor entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def sup_norm(self) -> float:
        """Largest Euclidean norm of the moment vector over all cells."""
        if self.dim == 0:
            return 0.0
        return float(np.sqrt(np.max(np.sum(self.values**2, axis=-1))))

    @classmethod
    def empty(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> MomentTensor:
        return cls(np.zeros((mu.size, nu.size, 0)))

    @classmethod
    def displacement(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> MomentTensor:
        """``y - x``: the martingale constraint or the barycentric penalty argument."""
        if mu.dim != nu.dim:
            raise ShapeError("mu and nu live in different dimensions")
        return cls(nu.points[None, :, :] - mu.points[:, None, :])

    martingale = displacement
    barycentric = displacement


@dataclass(frozen=True, eq=False)
class Penalty:
    """Convex penalty on conditional moments, evaluated row-wise.

    Arrays passed to the callables have shape ``(n, m)``; ``value`` and
    ``conjugate`` return shape ``(n,)``, the gradients return ``(n, m)``.
    ``conjugate_lipschitz`` is the Lipschitz constant of the conjugate's
    gradient and ``growth_exponent`` the ``a`` in ``value(u) >= c |u|^(1+a)``
    when such a bound is known.
    """

    kind: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conjugate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conjugate_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conjugate_lipschitz: float = math.inf
    growth_exponent: Optional[float] = None
    scale: Optional[float] = None

    @classmethod
    def quadratic(cls, scale: float = 1.0) -> Penalty:
        """``s |u|^2`` with conjugate ``|p|^2 / (4 s)``."""
        s = float(scale)
        if not s > 0:
            raise ValueError(f"quadratic penalty needs a positive scale, got {scale}")
        return cls(
            kind="quadratic",
            value=lambda u: s * np.sum(u * u, axis=-1),
            grad=lambda u: 2.0 * s * u,
            conjugate=lambda p: np.sum(p * p, axis=-1) / (4.0 * s),
            conjugate_grad=lambda p: p / (2.0 * s),
            conjugate_lipschitz=1.0 / (2.0 * s),
            growth_exponent=1.0,
            scale=s,
        )

    @classmethod
    def custom(
        cls,
        value,
        grad=None,
        conjugate=None,
        conjugate_grad=None,
        conjugate_lipschitz=math.inf,
        growth_exponent=None,
    ) -> Penalty:
        return cls(
            kind="custom",
            value=value,
            grad=grad,
            conjugate=conjugate,
            conjugate_grad=conjugate_grad,
            conjugate_lipschitz=conjugate_lipschitz,
            growth_exponent=growth_exponent,
        )

    @property
    def has_conjugate(self) -> bool:
        return self.conjugate is not None and self.conjugate_grad is not None

    def conj(self, p: np.ndarray) -> np.ndarray:
        if self.conjugate is not None:
            return self.conjugate(p)
        return _numeric_conjugate(self, p)[0]

    def conj_grad(self, p: np.ndarray) -> np.ndarray:
        if self.conjugate_grad is not None:
            return self.conjugate_grad(p)
        return _numeric_conjugate(self, p)[1]


def _numeric_conjugate(pen: Penalty, p: np.ndarray):
    """Row-wise sup_u <p, u> - value(u) by BFGS; the maximiser is the conjugate gradient."""
    from scipy.optimize import minimize

    p = np.atleast_2d(p)
    vals = np.empty(p.shape[0])
    args = np.empty_like(p)
    for i, row in enumerate(p):

        def obj(u, row=row):
            return float(pen.value(u[None, :])[0] - row @ u)

        jac = None
        if pen.grad is not None:
            jac = lambda u, row=row: pen.grad(u[None, :])[0] - row  # noqa: E731
        res = minimize(obj, np.zeros_like(row), jac=jac, method="BFGS", options={"gtol": 1e-12})
        vals[i] = -res.fun
        args[i] = res.x
    return vals, args


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Entropic weak transport problem with soft (``f``) and hard (``g``) moments.

    ``zeta=None`` enforces ``g``-moments exactly through a free multiplier;
    a positive ``zeta`` replaces the constraint by ``theta_tilde / zeta``.
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost: GroundCost
    f: MomentTensor = None
    g: MomentTensor = None
    theta: Optional[Penalty] = None
    theta_tilde: Optional[Penalty] = None
    epsilon: float = 1e-2
    zeta: Optional[float] = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if not isinstance(self.cost, GroundCost):
            set_("cost", GroundCost(self.cost))
        for name in ("f", "g"):
            t = getattr(self, name)
            if t is None:
                set_(name, MomentTensor.empty(self.mu, self.nu))
            elif not isinstance(t, MomentTensor):
                set_(name, MomentTensor(t))
        shape = (self.mu.size, self.nu.size)
        if self.cost.matrix.shape != shape:
            raise ShapeError(f"cost shape {self.cost.matrix.shape} != {shape}")
        for name in ("f", "g"):
            if getattr(self, name).values.shape[:2] != shape:
                raise ShapeError(f"{name} shape {getattr(self, name).values.shape[:2]} != {shape}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.f.dim > 0 and self.theta is None:
            raise ValueError("soft moments f given without a penalty theta")
        if self.zeta is not None:
            if not self.zeta > 0:
                raise ValueError(f"zeta must be positive, got {self.zeta}")
            if self.theta_tilde is None:
                raise ValueError("penalized mode (zeta given) needs theta_tilde")

    @property
    def n_x(self) -> int:
        return self.mu.size

    @property
    def n_y(self) -> int:
        return self.nu.size

    @property
    def M(self) -> int:
        return self.f.dim

    @property
    def N(self) -> int:
        return self.g.dim

    @property
    def hard_mode(self) -> bool:
        return self.zeta is None

    def with_epsilon(self, epsilon: float) -> ProblemSpec:
        return replace(self, epsilon=epsilon)

    def with_zeta(self, zeta: Optional[float], theta_tilde: Optional[Penalty] = None) -> ProblemSpec:
        tt = theta_tilde if theta_tilde is not None else self.theta_tilde
        if zeta is not None and tt is None:
            tt = Penalty.quadratic(1.0)
        return replace(self, zeta=zeta, theta_tilde=tt)


def conditional_moments(pi: Coupling, t: MomentTensor) -> np.ndarray:
    """All rows of ``sum_j t[i, j] pi[i, j] / mu_i``; zero-mass rows give 0."""
    mu = pi.row_measure.weights
    raw = np.einsum("ijk,ij->ik", t.values, pi.matrix)
    out = np.zeros_like(raw)
    pos = mu > 0
    out[pos] = raw[pos] / mu[pos, None]
    return out


def conditional_moment(pi: Coupling, t: MomentTensor, i: int) -> np.ndarray:
    mu_i = pi.row_measure.weights[i]
    if mu_i <= 0:
        raise ZeroMassRow(f"row {i} has zero mu-mass")
    return t.values[i].T @ pi.matrix[i] / mu_i


@dataclass(frozen=True)
class PrimalValue:
    linear: float
    soft: float
    hard_penalty: float
    entropy: float
    total: float

    def as_dict(self) -> dict:
        return {
            "linear": self.linear,
            "soft": self.soft,
            "hard_penalty": self.hard_penalty,
            "entropy": self.entropy,
            "total": self.total,
        }


def primal_value(pi: Coupling, spec: ProblemSpec, check: bool = True) -> PrimalValue:
    """Entropic primal objective of ``pi``, term by term.

    With ``check=True`` the marginals of ``pi`` must match the problem's to
    ``MARGINAL_TOL``. The solver evaluates near-feasible Gibbs plans with
    ``check=False``.
    """
    if check:
        pi.require_marginals(MARGINAL_TOL)
    mu = spec.mu.weights
    linear = float(np.sum(spec.cost.matrix * pi.matrix))
    soft = 0.0
    if spec.M > 0:
        soft = float(mu @ spec.theta.value(conditional_moments(pi, spec.f)))
    hard = 0.0
    if spec.zeta is not None and spec.N > 0:
        hard = float(mu @ spec.theta_tilde.value(conditional_moments(pi, spec.g))) / spec.zeta
    entropy = spec.epsilon * relative_entropy(pi)
    return PrimalValue(linear, soft, hard, entropy, linear + soft + hard + entropy)
