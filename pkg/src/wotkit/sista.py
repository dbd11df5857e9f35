"""Sinkhorn-ISTA iteration for entropic weak transport with moment constraints.

Each outer iteration performs exact block maximisation of the dual in the
potentials (a Sinkhorn sweep in phi then psi, written with softmins) followed
by one proximal-gradient ascent step in the moment multipliers (lam, alpha).
The lam/alpha gradients are preconditioned row by row, i.e. divided by mu_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .dual import (
    EXPONENT_LIMIT,
    DualState,
    dual_value,
    moment_cost,
    softmin_rows,
)
from .errors import ConfigError, Diverged, NotConverged
from .measures import Coupling
from .model import PrimalValue, ProblemSpec, primal_value
from .polish import newton_step, supports_newton

log = logging.getLogger(__name__)

TAU_CAP = 1.0
MIN_TAU_FACTOR = 2.0**-12
DIVERGENCE_WINDOW = 50


@dataclass(frozen=True)
class SolverConfig:
    tau: Union[float, str] = "auto"
    max_outer_iters: int = 200_000
    tol_marginal: float = 1e-9
    tol_gap: float = 1e-8
    tol_moment: float = 1e-6
    inner_sinkhorn_iters: int = 1
    gauge_fix: bool = False
    polish: Optional[str] = None
    polish_after: int = 500

    def __post_init__(self):
        for name in ("tol_marginal", "tol_gap", "tol_moment"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.tau != "auto" and not (isinstance(self.tau, (int, float)) and self.tau > 0):
            raise ConfigError(f"tau must be positive or 'auto', got {self.tau!r}")
        if self.max_outer_iters < 1 or self.inner_sinkhorn_iters < 1:
            raise ConfigError("iteration counts must be at least 1")
        if self.polish not in (None, "newton"):
            raise ConfigError(f"unknown polish {self.polish!r}")


@dataclass(frozen=True)
class TraceRow:
    dual: float
    gap: float
    marginal_residual: float
    moment_residual: float
    tau: float


@dataclass(frozen=True, eq=False)
class SolveReport:
    final_state: DualState
    plan: Coupling
    iterations: int
    marginal_residual: float
    moment_residual: float
    duality_gap: float
    dual_value: float
    primal_breakdown: PrimalValue
    converged: bool
    tau: float
    step_too_large: int = 0
    newton_steps: int = 0
    trace: tuple = ()
    warnings: tuple = ()

    @property
    def value(self) -> float:
        """Primal objective of the returned plan."""
        return self.primal_breakdown.total

    @property
    def alpha_sup_norm(self) -> float:
        a = self.final_state.alpha
        return float(np.max(np.abs(a))) if a.size else 0.0

    def raise_if_not_converged(self) -> None:
        if not self.converged:
            raise NotConverged(
                f"stopped after {self.iterations} iterations: marginal "
                f"{self.marginal_residual:.2e}, gap {self.duality_gap:.2e}, "
                f"moment {self.moment_residual:.2e}"
            )

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "marginal_residual": self.marginal_residual,
            "moment_residual": self.moment_residual,
            "duality_gap": self.duality_gap,
            "dual_value": self.dual_value,
            "primal": self.primal_breakdown.as_dict(),
            "alpha_sup_norm": self.alpha_sup_norm,
            "tau": self.tau,
            "step_too_large": self.step_too_large,
            "newton_steps": self.newton_steps,
            "warnings": list(self.warnings),
        }


def auto_step_size(spec: ProblemSpec) -> float:
    """``epsilon / (|f|^2 + |g|^2 + L epsilon)``, capped at ``TAU_CAP``.

    ``L`` bounds the Lipschitz constant of the gradient of the penalty
    conjugates that are handled by explicit gradient steps.
    """
    lip = 0.0
    if spec.M:
        lip = spec.theta.conjugate_lipschitz
    if spec.N and spec.zeta is not None and spec.theta_tilde.kind != "quadratic":
        # gradient of alpha -> theta_tilde*(zeta alpha) / zeta
        lip = max(lip, spec.zeta * spec.theta_tilde.conjugate_lipschitz)
    denom = spec.f.sup_norm() ** 2 + spec.g.sup_norm() ** 2 + lip * spec.epsilon
    if denom <= 0:
        return TAU_CAP
    return min(TAU_CAP, spec.epsilon / denom)


def _phi_update(base, psi, spec):
    return softmin_rows(base - psi[None, :], spec.nu.weights, spec.epsilon)


def _psi_update(base, phi, spec):
    return softmin_rows((base - phi[:, None]).T, spec.mu.weights, spec.epsilon)


def phi_half_step(state: DualState, spec: ProblemSpec) -> DualState:
    return state.replace(phi=_phi_update(moment_cost(state, spec), state.psi, spec))


def psi_half_step(state: DualState, spec: ProblemSpec) -> DualState:
    return state.replace(psi=_psi_update(moment_cost(state, spec), state.phi, spec))


def sinkhorn_block(state: DualState, spec: ProblemSpec) -> DualState:
    """Exact maximisation in phi, then in psi, with (lam, alpha) frozen."""
    base = moment_cost(state, spec)
    phi = _phi_update(base, state.psi, spec)
    psi = _psi_update(base, phi, spec)
    return state.replace(phi=phi, psi=psi)


def _ista(lam, alpha, base, phi, psi, spec, tau):
    eps = spec.epsilon
    wrho = np.exp(-(base - phi[:, None] - psi[None, :]) / eps) * spec.nu.weights[None, :]
    if spec.M:
        fm = np.einsum("ijk,ij->ik", spec.f.values, wrho)
        lam = lam - tau * (spec.theta.conj_grad(lam) - fm)
    if spec.N:
        gm = np.einsum("ijk,ij->ik", spec.g.values, wrho)
        if spec.zeta is None:
            alpha = alpha + tau * gm
        elif spec.theta_tilde.kind == "quadratic":
            # prox of tau * zeta |a|^2 / (4 s) after the gradient step
            shrink = 1.0 + tau * spec.zeta / (2.0 * spec.theta_tilde.scale)
            alpha = (alpha + tau * gm) / shrink
        else:
            alpha = alpha - tau * (spec.theta_tilde.conj_grad(spec.zeta * alpha) - gm)
    return lam, alpha


def ista_block(state: DualState, spec: ProblemSpec, tau: float) -> DualState:
    """One preconditioned (proximal) gradient ascent step in (lam, alpha)."""
    if not tau > 0:
        raise ValueError(f"step size must be positive, got {tau}")
    lam, alpha = _ista(
        state.lam, state.alpha, moment_cost(state, spec), state.phi, state.psi, spec, tau
    )
    return state.replace(lam=lam, alpha=alpha)


@dataclass
class _Diagnostics:
    dual: float
    primal: float
    marginal: float
    moment: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def _diagnose(base, phi, psi, lam, alpha, spec) -> _Diagnostics:
    mu, nu, eps = spec.mu.weights, spec.nu.weights, spec.epsilon
    shadow = base - phi[:, None] - psi[None, :]
    with np.errstate(divide="ignore"):
        logp = np.log(mu)[:, None] + np.log(nu)[None, :] - shadow / eps
    if np.max(logp) > EXPONENT_LIMIT:
        return _Diagnostics(-math.inf, math.inf, math.inf, math.inf)
    pi = np.exp(logp)
    rows, cols = pi.sum(axis=1), pi.sum(axis=0)
    marginal = max(np.abs(rows - mu).max(), np.abs(cols - nu).max())
    pos = mu > 0
    conj = np.zeros(spec.n_x)
    primal = float(np.sum(spec.cost.matrix * pi)) - float(np.sum(pi * shadow))
    moment = 0.0
    if spec.M:
        fm = np.zeros((spec.n_x, spec.M))
        fm[pos] = np.einsum("ijk,ij->ik", spec.f.values, pi)[pos] / mu[pos, None]
        primal += float(mu @ spec.theta.value(fm))
        conj += spec.theta.conj(lam)
    if spec.N:
        gm = np.zeros((spec.n_x, spec.N))
        gm[pos] = np.einsum("ijk,ij->ik", spec.g.values, pi)[pos] / mu[pos, None]
        moment = float(np.max(np.linalg.norm(gm[pos], axis=1)))
        if spec.zeta is not None:
            primal += float(mu @ spec.theta_tilde.value(gm)) / spec.zeta
            conj += spec.theta_tilde.conj(spec.zeta * alpha) / spec.zeta
    dual = float(mu @ phi + nu @ psi - mu @ conj - eps * pi.sum() + eps)
    return _Diagnostics(dual, primal, float(marginal), moment)


def _converged(d: _Diagnostics, spec: ProblemSpec, config: SolverConfig) -> bool:
    ok = d.marginal <= config.tol_marginal and abs(d.gap) <= config.tol_gap
    if spec.N and spec.zeta is None:
        ok = ok and d.moment <= config.tol_moment
    return ok


def _qualification_warnings(spec: ProblemSpec) -> list:
    if not (spec.N and spec.zeta is None):
        return []
    from .model import MomentTensor
    from .order import convex_order_1d

    if spec.mu.dim != 1 or spec.nu.dim != 1:
        return []
    if not np.allclose(spec.g.values, MomentTensor.martingale(spec.mu, spec.nu).values):
        return []
    rep = convex_order_1d(spec.mu, spec.nu)
    if rep.convex_order:
        return []
    return [
        "mu is not dominated by nu in convex order: the martingale constraint is infeasible "
        f"(margin {rep.margin:.3e}, mean gap {rep.mean_gap:.3e})"
    ]


def solve(
    spec: ProblemSpec,
    config: Optional[SolverConfig] = None,
    init: Optional[DualState] = None,
    record_trace: bool = True,
) -> SolveReport:
    """Run Sinkhorn-ISTA until marginals, duality gap and hard moments are all small.

    Parameters
    ----------
    spec : ProblemSpec
        Problem to solve. ``spec.zeta is None`` means hard moment constraints.
    config : SolverConfig, optional
        Step size and stopping rule.
    init : DualState, optional
        Warm start; zeros otherwise.
    record_trace : bool
        Keep one ``TraceRow`` per outer iteration.

    Returns
    -------
    SolveReport
        Always returned; ``converged`` is False when the iteration cap was hit.

    Raises
    ------
    Diverged
        When the dual objective keeps decreasing at the smallest admissible step.
    """
    config = config or SolverConfig()
    state = init if init is not None else DualState.zeros(spec)
    state.check(spec)
    tau0 = auto_step_size(spec) if config.tau == "auto" else float(config.tau)
    tau = tau0
    warn = _qualification_warnings(spec)
    for w in warn:
        log.warning(w)

    phi, psi = state.phi.copy(), state.psi.copy()
    lam, alpha = state.lam.copy(), state.alpha.copy()
    has_moments = spec.M > 0 or spec.N > 0
    base = moment_cost(state, spec)
    prev_dual = dual_value(state, spec)
    trace = []
    too_large = 0
    falling_at_floor = 0
    diag = None
    it = 0
    newton = config.polish == "newton" and supports_newton(spec)
    newton_polished = 0
    newton_resume = config.polish_after
    for it in range(1, config.max_outer_iters + 1):
        if newton and it > newton_resume:
            polished, ok = newton_step(DualState(phi, psi, lam, alpha), spec)
            if ok:
                phi, psi = polished.phi.copy(), polished.psi.copy()
                lam, alpha = polished.lam.copy(), polished.alpha.copy()
                base = moment_cost(polished, spec)
                newton_polished += 1
            else:
                newton_resume = it + config.polish_after
        else:
            for _ in range(config.inner_sinkhorn_iters):
                phi = _phi_update(base, psi, spec)
                psi = _psi_update(base, phi, spec)
            if has_moments:
                lam, alpha = _ista(lam, alpha, base, phi, psi, spec, tau)
                base = moment_cost(DualState(phi, psi, lam, alpha), spec)
        if config.gauge_fix:
            a = float(spec.mu.weights @ phi)
            phi, psi = phi - a, psi + a
        with np.errstate(over="ignore"):
            # far from the optimum a too-large step can make moments overflow
            diag = _diagnose(base, phi, psi, lam, alpha, spec)
        if record_trace:
            trace.append(TraceRow(diag.dual, diag.gap, diag.marginal, diag.moment, tau))
        if diag.dual < prev_dual - 1e-12 * max(1.0, abs(prev_dual)):
            too_large += 1
            if tau > tau0 * MIN_TAU_FACTOR:
                tau *= 0.5
                log.debug("dual decreased at iteration %d, step halved to %.3e", it, tau)
            else:
                falling_at_floor += 1
                if falling_at_floor >= DIVERGENCE_WINDOW:
                    raise Diverged(
                        f"dual objective decreased {DIVERGENCE_WINDOW} times in a row "
                        f"at step {tau:.3e}"
                    )
        else:
            falling_at_floor = 0
        prev_dual = diag.dual
        if _converged(diag, spec, config):
            break

    final = DualState(phi, psi, lam, alpha)
    plan = Coupling(spec.mu, spec.nu, np.exp(_safe_logp(base, phi, psi, spec)))
    breakdown = primal_value(plan, spec, check=False)
    converged = diag is not None and _converged(diag, spec, config)
    if not converged:
        log.info("solver stopped at iteration cap %d without converging", it)
    return SolveReport(
        final_state=final,
        plan=plan,
        iterations=it,
        marginal_residual=diag.marginal,
        moment_residual=diag.moment,
        duality_gap=breakdown.total - diag.dual,
        dual_value=diag.dual,
        primal_breakdown=breakdown,
        converged=converged,
        tau=tau,
        step_too_large=too_large,
        newton_steps=newton_polished,
        trace=tuple(trace),
        warnings=tuple(warn),
    )


def _safe_logp(base, phi, psi, spec):
    with np.errstate(divide="ignore"):
        logp = (
            np.log(spec.mu.weights)[:, None]
            + np.log(spec.nu.weights)[None, :]
            - (base - phi[:, None] - psi[None, :]) / spec.epsilon
        )
    return np.minimum(logp, EXPONENT_LIMIT)
