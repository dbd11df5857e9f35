"""Damped Newton steps on the smooth entropic dual.

Used to finish a solve once Sinkhorn-ISTA has reached the neighbourhood of
the optimum: plain Sinkhorn converges sublinearly when the Gibbs plan is
close to a permutation, which is the common situation for one-dimensional
problems at small epsilon. The fixed point is the same, so every certificate
of the solver still applies.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dual import EXPONENT_LIMIT, DualState, moment_cost
from .model import ProblemSpec

ARMIJO = 1e-4
MAX_HALVINGS = 40


def supports_newton(spec: ProblemSpec) -> bool:
    """Newton needs second derivatives of the conjugates: quadratic penalties only."""
    if spec.M and spec.theta.kind != "quadratic":
        return False
    if spec.N and spec.zeta is not None and spec.theta_tilde.kind != "quadratic":
        return False
    return True


def _objective(phi, psi, lam, alpha, spec):
    mu, nu, eps = spec.mu.weights, spec.nu.weights, spec.epsilon
    base = moment_cost(DualState(phi, psi, lam, alpha), spec)
    with np.errstate(divide="ignore"):
        logp = np.log(mu)[:, None] + np.log(nu)[None, :] - (base - phi[:, None] - psi[None, :]) / eps
    if np.max(logp) > EXPONENT_LIMIT:
        return -np.inf, None
    P = np.exp(logp)
    conj = np.zeros(spec.n_x)
    if spec.M:
        conj += np.sum(lam**2, axis=1) / (4.0 * spec.theta.scale)
    if spec.N and spec.zeta is not None:
        conj += spec.zeta * np.sum(alpha**2, axis=1) / (4.0 * spec.theta_tilde.scale)
    val = float(mu @ phi + nu @ psi - mu @ conj - eps * P.sum() + eps)
    return val, P


def newton_step(state: DualState, spec: ProblemSpec):
    """One damped Newton ascent step; returns ``(new_state, improved)``."""
    mu, nu, eps = spec.mu.weights, spec.nu.weights, spec.epsilon
    nx, ny, M, N = spec.n_x, spec.n_y, spec.M, spec.N
    k = 1 + M + N
    phi, psi, lam, alpha = state.phi, state.psi, state.lam, state.alpha
    val, P = _objective(phi, psi, lam, alpha, spec)
    if P is None:
        return state, False

    # per-cell derivative of the shadow cost w.r.t. the row variables (phi_i, lam_i, alpha_i)
    E = np.concatenate(
        [-np.ones((nx, ny, 1)), spec.f.values, spec.g.values], axis=2
    )
    W = P / eps
    grad_r = np.zeros((nx, k))
    grad_r[:, 0] = mu - P.sum(axis=1)
    curv = np.zeros((nx, k))
    if M:
        s = spec.theta.scale
        grad_r[:, 1 : 1 + M] = _moment(P, spec.f.values) - mu[:, None] * lam / (2.0 * s)
        curv[:, 1 : 1 + M] = mu[:, None] / (2.0 * s)
    if N:
        grad_r[:, 1 + M :] = _moment(P, spec.g.values)
        if spec.zeta is not None:
            s = spec.theta_tilde.scale
            grad_r[:, 1 + M :] -= mu[:, None] * spec.zeta * alpha / (2.0 * s)
            curv[:, 1 + M :] = mu[:, None] * spec.zeta / (2.0 * s)
    grad_psi = nu - P.sum(axis=0)

    # negative Hessian, assembled densely
    size = nx * k + ny
    Hn = np.zeros((size, size))
    rr = np.einsum("ij,ija,ijb->iab", W, E, E)
    rr[:, np.arange(k), np.arange(k)] += curv
    for i in range(nx):
        Hn[i * k : (i + 1) * k, i * k : (i + 1) * k] = rr[i]
    rpsi = -(W[:, :, None] * E).transpose(0, 2, 1).reshape(nx * k, ny)
    Hn[: nx * k, nx * k :] = rpsi
    Hn[nx * k :, : nx * k] = rpsi.T
    Hn[np.arange(nx * k, size), np.arange(nx * k, size)] = W.sum(axis=0)
    grad = np.concatenate([grad_r.ravel(), grad_psi])

    ridge = 1e-12 * max(1.0, float(np.max(np.diag(Hn))))
    Hn[np.diag_indices(size)] += ridge
    try:
        step = cho_solve(cho_factor(Hn, lower=False, check_finite=False), grad)
    except LinAlgError:
        step = np.linalg.lstsq(Hn, grad, rcond=None)[0]
    slope = float(grad @ step)
    if not slope > 0:
        return state, False

    dr = step[: nx * k].reshape(nx, k)
    dpsi = step[nx * k :]
    t = 1.0
    for _ in range(MAX_HALVINGS):
        cand = (
            phi + t * dr[:, 0],
            psi + t * dpsi,
            lam + t * dr[:, 1 : 1 + M],
            alpha + t * dr[:, 1 + M :],
        )
        new_val, _ = _objective(*cand, spec)
        if new_val >= val + ARMIJO * t * slope:
            return DualState(*cand), True
        t *= 0.5
    return state, False


def _moment(P, tensor):
    return np.einsum("ij,ijk->ik", P, tensor)
