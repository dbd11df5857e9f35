"""Dual variables, shadow cost, Gibbs plans and the entropic dual objective.

Everything exponential is computed from the log-domain matrix
``log mu_i + log nu_j - shadow_ij / epsilon`` after subtracting maxima.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import OverflowFlag, ShapeError
from .measures import Coupling
from .model import ProblemSpec

EXPONENT_LIMIT = 700.0


@dataclass(frozen=True, eq=False)
class DualState:
    """Potentials ``phi`` (n_x), ``psi`` (n_y) and multipliers ``lam`` (n_x, M), ``alpha`` (n_x, N)."""

    phi: np.ndarray
    psi: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("phi", "psi", "lam", "alpha"):
            a = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"dual variable {name} is not finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.lam.ndim != 2 or self.alpha.ndim != 2:
            raise ShapeError("lam and alpha must be 2-d arrays (n_x, M) and (n_x, N)")

    @classmethod
    def zeros(cls, spec: ProblemSpec) -> DualState:
        return cls(
            np.zeros(spec.n_x),
            np.zeros(spec.n_y),
            np.zeros((spec.n_x, spec.M)),
            np.zeros((spec.n_x, spec.N)),
        )

    def check(self, spec: ProblemSpec) -> None:
        expected = ((spec.n_x,), (spec.n_y,), (spec.n_x, spec.M), (spec.n_x, spec.N))
        got = (self.phi.shape, self.psi.shape, self.lam.shape, self.alpha.shape)
        if got != expected:
            raise ShapeError(f"dual state shapes {got} do not match problem {expected}")

    def replace(self, **changes) -> DualState:
        return replace(self, **changes)

    def gauge_fixed(self, mu_weights: np.ndarray) -> DualState:
        """Shift (phi, psi) -> (phi - a, psi + a) so that sum_i mu_i phi_i = 0."""
        a = float(mu_weights @ self.phi)
        return self.replace(phi=self.phi - a, psi=self.psi + a)

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("phi", "psi", "lam", "alpha")}


def moment_cost(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """``cost + lam . f + alpha . g``: the shadow cost before the potentials."""
    out = np.array(spec.cost.matrix, dtype=float)
    if spec.M:
        out += np.einsum("ijk,ik->ij", spec.f.values, state.lam)
    if spec.N:
        out += np.einsum("ijk,ik->ij", spec.g.values, state.alpha)
    return out


def shadow_cost(state: DualState, spec: ProblemSpec) -> np.ndarray:
    return moment_cost(state, spec) - state.phi[:, None] - state.psi[None, :]


def _log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def softmin(values, weights, epsilon: float) -> float:
    """``-epsilon log sum_k w_k exp(-v_k / epsilon)``, shifted by the min over the support."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(softmin_rows(v[None, :], w, epsilon)[0])


def softmin_rows(values: np.ndarray, weights: np.ndarray, epsilon: float) -> np.ndarray:
    """Softmin of every row of ``values`` against the common weight vector."""
    support = weights > 0
    v = values[:, support]
    w = weights[support]
    vmin = v.min(axis=1)
    s = np.exp(-(v - vmin[:, None]) / epsilon) @ w
    return vmin - epsilon * np.log(s)


def log_gibbs(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """Log of the Gibbs plan ``mu_i nu_j exp(-shadow_ij / epsilon)``."""
    return (
        _log(spec.mu.weights)[:, None]
        + _log(spec.nu.weights)[None, :]
        - shadow_cost(state, spec) / spec.epsilon
    )


def gibbs_plan(state: DualState, spec: ProblemSpec) -> Coupling:
    """Unnormalised Gibbs coupling; marginal agreement is left as a certificate."""
    logp = log_gibbs(state, spec)
    top = np.max(logp)
    if top > EXPONENT_LIMIT:
        raise OverflowFlag(f"Gibbs exponent {top:.1f} exceeds {EXPONENT_LIMIT}")
    return Coupling(spec.mu, spec.nu, np.exp(logp))


def density(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """``exp(-shadow / epsilon)``, the Gibbs density against mu x nu."""
    return np.exp(-shadow_cost(state, spec) / spec.epsilon)


def _penalty_conj_terms(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """Per-row sum of the conjugate penalties paid by (lam, alpha)."""
    out = np.zeros(spec.n_x)
    if spec.M:
        out += spec.theta.conj(state.lam)
    if spec.N and spec.zeta is not None:
        # conjugate of theta_tilde / zeta, evaluated at alpha
        out += spec.theta_tilde.conj(spec.zeta * state.alpha) / spec.zeta
    return out


def dual_value(state: DualState, spec: ProblemSpec) -> float:
    """Entropic dual objective, including the ``+ epsilon`` offset.

    ``sum mu phi + sum nu psi - sum mu theta*(lam) - epsilon * mass(Gibbs) + epsilon``,
    with the conjugate of ``theta_tilde / zeta`` subtracted as well in
    penalized mode.
    """
    mu, nu, eps = spec.mu.weights, spec.nu.weights, spec.epsilon
    logp = log_gibbs(state, spec)
    top = np.max(logp)
    mass = np.exp(top) * np.sum(np.exp(logp - top))
    return float(
        mu @ state.phi + nu @ state.psi - mu @ _penalty_conj_terms(state, spec) - eps * mass + eps
    )


def dual_gradient(state: DualState, spec: ProblemSpec) -> DualState:
    """Gradient of ``dual_value`` in every block, packed as a DualState."""
    mu, nu = spec.mu.weights, spec.nu.weights
    rho = density(state, spec)
    wrho = rho * nu[None, :]
    g_phi = mu * (1.0 - wrho.sum(axis=1))
    g_psi = nu * (1.0 - mu @ rho)
    g_lam = np.zeros_like(state.lam)
    g_alpha = np.zeros_like(state.alpha)
    if spec.M:
        fm = np.einsum("ijk,ij->ik", spec.f.values, wrho)
        g_lam = mu[:, None] * (fm - spec.theta.conj_grad(state.lam))
    if spec.N:
        gm = np.einsum("ijk,ij->ik", spec.g.values, wrho)
        if spec.zeta is not None:
            gm = gm - spec.theta_tilde.conj_grad(spec.zeta * state.alpha)
        g_alpha = mu[:, None] * gm
    return DualState(g_phi, g_psi, g_lam, g_alpha)
