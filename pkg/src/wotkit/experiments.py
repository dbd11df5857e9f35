"""Experiment runners behind the command line.

Every runner is a deterministic function of its ``ExperimentConfig``: the
marginals come from quantile grids or from a seeded generator, and all
artifacts are written with fixed formatting.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import ConfigError
from .io import load_spec, report_record, save_coupling_csv, write_json
from .measures import (
    Coupling,
    DiscreteMeasure,
    load_measure_csv,
    relative_entropy,
    w_infinity_distance_1d,
)
from .model import GroundCost, MomentTensor, Penalty, ProblemSpec, conditional_moments
from .oracle import solve_martingale_lp, unregularized_value_extrapolation
from .order import convex_order_1d, nondegeneracy_check
from .sista import SolverConfig, solve
from .sliced import sliced_approximation, sliced_entropy_bound

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "brenier_strassen",
    "left_curtain",
    "solve",
    "rate_study_eps",
    "rate_study_zeta",
    "check_order",
    "sliced_test",
)

# per-experiment defaults for fields left unset
_DEFAULTS = {
    "brenier_strassen": {"n_points": 200, "epsilon": 1e-2},
    "left_curtain": {"n_points": 200, "epsilon": 1e-2},
    "solve": {"n_points": 2, "epsilon": 1e-2},
    "rate_study_eps": {"n_points": 5, "epsilon": 5e-3},
    "rate_study_zeta": {"n_points": 5, "epsilon": 1e-3},
    "check_order": {"n_points": 2, "epsilon": 1e-2},
    "sliced_test": {"n_points": 8, "epsilon": 1e-2},
}

EPS_GRID = (0.1, 0.05, 0.02, 0.01, 0.005)
ZETA_GRID = (1e-1, 1e-2, 1e-3)
DELTA_GRID = (0.5, 0.2, 0.1)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n_points: Optional[int] = None
    epsilon: Optional[float] = None
    zeta: Optional[float] = None
    t_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    seed: int = 0
    output_dir: str = "out"
    spec: Optional[str] = None
    mu: Optional[str] = None
    nu: Optional[str] = None
    max_outer_iters: int = 100_000
    polish: Optional[str] = "newton"
    polish_after: int = 300
    samples: int = 100

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        d = _DEFAULTS[self.experiment]
        if self.n_points is None:
            object.__setattr__(self, "n_points", d["n_points"])
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", d["epsilon"])
        object.__setattr__(self, "t_grid", tuple(float(t) for t in self.t_grid))
        if not all(0.0 <= t <= 1.0 for t in self.t_grid) or not self.t_grid:
            raise ConfigError(f"t_grid values must lie in [0, 1], got {self.t_grid}")
        if int(self.n_points) < 2:
            raise ConfigError("n_points must be at least 2")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.zeta is not None and not self.zeta > 0:
            raise ConfigError("zeta must be positive")
        if self.samples < 1:
            raise ConfigError("samples must be positive")
        if self.experiment == "solve" and not self.spec:
            raise ConfigError("the solve experiment needs a problem file (--spec)")
        if self.experiment == "check_order" and not (self.mu and self.nu):
            raise ConfigError("check_order needs --mu and --nu measure files")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def solver(self) -> SolverConfig:
        return SolverConfig(
            max_outer_iters=self.max_outer_iters,
            polish=self.polish,
            polish_after=self.polish_after,
        )


@dataclass
class ExperimentResult:
    summary: dict
    converged: bool = True


# ---------------------------------------------------------------------------
# instances


def _mixture_quantile(q: float) -> float:
    cdf = lambda y: 0.5 * norm.cdf(y + 1.0) + 0.5 * norm.cdf(y - 1.0) - q  # noqa: E731
    return brentq(cdf, -20.0, 20.0, xtol=1e-15, rtol=1e-15)


def quantile_grids(n: int):
    """Equal-weight grids for N(0, 1) and the mixture of N(-1, 1) and N(1, 1).

    Atoms sit at the quantiles of levels ``(k - 1/2) / n``.
    """
    levels = (np.arange(1, n + 1) - 0.5) / n
    x = norm.ppf(levels)
    y = np.array([_mixture_quantile(q) for q in levels])
    # the mixture is symmetric; enforce it exactly so both means are 0
    y = 0.5 * (y - y[::-1])
    return DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)


def random_convex_ordered_pair(n_x: int, n_y: int, rng: np.random.Generator):
    """Random ``mu <=cvx nu`` on the line with a strictly positive martingale kernel.

    ``x = K y`` and ``nu = mu K`` for a random positive row-stochastic ``K``, so
    the pair is irreducible and every ``x_i`` lies strictly inside the hull of
    the ``y_j``.
    """
    if n_x < 1 or n_y < 2:
        raise ValueError("need at least one mu-atom and two nu-atoms")
    while True:
        y = np.sort(rng.uniform(-2.0, 2.0, n_y))
        K = rng.uniform(0.2, 1.0, (n_x, n_y))
        K /= K.sum(axis=1, keepdims=True)
        x = K @ y
        w = rng.uniform(0.5, 1.5, n_x)
        w /= w.sum()
        gaps = np.concatenate([np.diff(np.sort(x)), np.diff(y), [1.0]])
        if gaps.min() > 1e-6:
            return DiscreteMeasure(x, w), DiscreteMeasure(y, w @ K)


# ---------------------------------------------------------------------------
# helpers


def _threads() -> int:
    raw = os.environ.get("WOTKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"WOTKIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _map_cells(fn, cells):
    """Run cells on up to WOTKIT_THREADS threads; results come back in input order."""
    n = min(_threads(), len(cells))
    if n <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, cells))


def _tag(t: float) -> str:
    return f"{t:.4f}".replace(".", "p")


def _barycentric_residual(pi: Coupling) -> float:
    """Largest ``|conditional mean - x_i|`` over the rows."""
    d = MomentTensor.displacement(pi.row_measure, pi.col_measure)
    return float(np.max(np.linalg.norm(conditional_moments(pi, d), axis=1)))


def _map_error(pi: Coupling) -> float:
    """Mean ``|conditional mean - y_i|`` against the sorted quantile pairing.

    Equal-weight grids of the same size only; this is the W1 distance between
    the barycentric map and the monotone map.
    """
    mu, nu = pi.row_measure, pi.col_measure
    bary = pi.matrix @ nu.line() / pi.row_sums()
    order_x = np.argsort(mu.line(), kind="stable")
    target = np.sort(nu.line())
    return float(np.mean(np.abs(bary[order_x] - target)))


def _quantile_coupling_distance(pi: Coupling) -> float:
    """Transport cost ``sum_ij pi_ij |y_j - y_sigma(i)|`` of moving ``pi`` onto the monotone coupling.

    An upper bound for the W1 distance between the two couplings.
    """
    mu, nu = pi.row_measure, pi.col_measure
    order_x = np.argsort(mu.line(), kind="stable")
    target = np.empty(mu.size)
    target[order_x] = np.sort(nu.line())
    return float(np.sum(pi.matrix * np.abs(nu.line()[None, :] - target[:, None])))


def _write_cell(out: Path, stem: str, report, spec, **extra) -> dict:
    save_coupling_csv(report.plan, out / f"coupling_{stem}.csv")
    rec = report_record(report, spec, **extra)
    write_json(rec, out / f"report_{stem}.json")
    return rec


# ---------------------------------------------------------------------------
# runners


def brenier_strassen_spec(mu, nu, t: float, epsilon: float) -> ProblemSpec:
    cost = t * GroundCost.squared_euclidean(mu, nu).matrix
    if t >= 1.0:
        return ProblemSpec(mu, nu, cost, epsilon=epsilon, label="t=1")
    return ProblemSpec(
        mu,
        nu,
        cost,
        f=MomentTensor.barycentric(mu, nu),
        theta=Penalty.quadratic(1.0 - t),
        epsilon=epsilon,
        label=f"t={t}",
    )


def run_brenier_strassen(config: ExperimentConfig, out: Path) -> ExperimentResult:
    mu, nu = quantile_grids(config.n_points)
    solver = config.solver()

    def cell(t):
        spec = brenier_strassen_spec(mu, nu, t, config.epsilon)
        report = solve(spec, solver, record_trace=False)
        return _write_cell(
            out,
            _tag(t),
            report,
            spec,
            t=t,
            barycentric_residual=_barycentric_residual(report.plan),
            map_w1_to_monotone=_map_error(report.plan),
            coupling_w1_bound=_quantile_coupling_distance(report.plan),
        )

    cells = _map_cells(cell, list(config.t_grid))
    return ExperimentResult({"cells": cells}, all(c["converged"] for c in cells))


def left_curtain_cost(mu, nu, t: float) -> np.ndarray:
    x, y = mu.line(), nu.line()
    sq = (x[:, None] - y[None, :]) ** 2
    other = (1.0 + np.tanh(-x))[:, None] * np.sqrt(1.0 + y**2)[None, :]
    return t * sq + (1.0 - t) * other


def left_curtain_spec(mu, nu, t: float, epsilon: float) -> ProblemSpec:
    """``t = 1``: plain entropic OT; ``t = 0``: exact martingale constraint;
    otherwise the martingale defect is penalized with weight ``1/t - 1``."""
    cost = left_curtain_cost(mu, nu, t)
    if t >= 1.0:
        return ProblemSpec(mu, nu, cost, epsilon=epsilon, label="t=1")
    g = MomentTensor.martingale(mu, nu)
    if t <= 0.0:
        return ProblemSpec(mu, nu, cost, g=g, epsilon=epsilon, label="t=0")
    return ProblemSpec(
        mu,
        nu,
        cost,
        g=g,
        theta_tilde=Penalty.quadratic(1.0),
        zeta=t / (1.0 - t),
        epsilon=epsilon,
        label=f"t={t}",
    )


def run_left_curtain(config: ExperimentConfig, out: Path) -> ExperimentResult:
    mu, nu = quantile_grids(config.n_points)
    solver = config.solver()

    def cell(t):
        spec = left_curtain_spec(mu, nu, t, config.epsilon)
        report = solve(spec, solver, record_trace=False)
        return _write_cell(
            out, _tag(t), report, spec, t=t, barycentric_residual=_barycentric_residual(report.plan)
        )

    cells = _map_cells(cell, list(config.t_grid))
    return ExperimentResult({"cells": cells}, all(c["converged"] for c in cells))


def run_solve(config: ExperimentConfig, out: Path) -> ExperimentResult:
    spec = load_spec(config.spec)
    if config.zeta is not None:
        spec = spec.with_zeta(config.zeta)
    report = solve(spec, config.solver(), record_trace=False)
    rec = _write_cell(out, "solve", report, spec, t=None)
    return ExperimentResult(rec, report.converged)


def rate_instance(config: ExperimentConfig):
    n_x = config.n_points
    n_y = n_x + 2
    if n_x * n_y > 400:
        raise ConfigError(f"rate studies need n_x * n_y <= 400, got {n_x}x{n_y}")
    mu, nu = random_convex_ordered_pair(n_x, n_y, np.random.default_rng(config.seed))
    return mu, nu, GroundCost.euclidean(mu, nu)


def run_rate_study_eps(config: ExperimentConfig, out: Path, eps_grid=EPS_GRID) -> ExperimentResult:
    mu, nu, cost = rate_instance(config)
    lp = solve_martingale_lp(mu, nu, cost)
    g = MomentTensor.martingale(mu, nu)
    solver = config.solver()
    rows, converged = [], True
    for eps in sorted(eps_grid, reverse=True):
        spec = ProblemSpec(mu, nu, cost, g=g, epsilon=eps)
        report = solve(spec, solver, record_trace=False)
        converged &= report.converged
        rows.append(
            {
                "epsilon": eps,
                "value": report.value,
                "gap_to_lp": report.value - lp.value,
                "iterations": report.iterations,
                "converged": report.converged,
                "moment_residual": report.moment_residual,
                "alpha_sup_norm": report.alpha_sup_norm,
            }
        )
    fit = unregularized_value_extrapolation([(r["epsilon"], r["value"]) for r in rows])
    gaps = [r["gap_to_lp"] for r in rows]
    summary = {
        "lp_value": lp.value,
        "rows": rows,
        "fit": {
            "v0_estimate": fit.v0_estimate,
            "slope": fit.slope,
            "r_squared": fit.r_squared,
            "intercept_error": fit.v0_estimate - lp.value,
        },
        "gaps_positive": all(gp > 0 for gp in gaps),
        "gaps_decreasing": all(a > b for a, b in zip(gaps, gaps[1:])),
    }
    _write_table(out / "rate_eps.csv", rows, ("epsilon", "value", "gap_to_lp"))
    return ExperimentResult(summary, converged)


def run_rate_study_zeta(config: ExperimentConfig, out: Path, zeta_grid=ZETA_GRID) -> ExperimentResult:
    mu, nu, cost = rate_instance(config)
    g = MomentTensor.martingale(mu, nu)
    solver = config.solver()
    hard_spec = ProblemSpec(mu, nu, cost, g=g, epsilon=config.epsilon)
    hard = solve(hard_spec, solver, record_trace=False)
    rows, converged = [], hard.converged
    for zeta in sorted(zeta_grid, reverse=True):
        spec = hard_spec.with_zeta(zeta, Penalty.quadratic(1.0))
        report = solve(spec, solver, record_trace=False)
        converged &= report.converged
        gap = hard.value - report.value
        rows.append(
            {
                "zeta": zeta,
                "value": report.value,
                "gap_to_hard": gap,
                "gap_over_zeta": gap / zeta,
                "iterations": report.iterations,
                "converged": report.converged,
            }
        )
    ratios = [r["gap_over_zeta"] for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    summary = {
        "epsilon": config.epsilon,
        "hard_value": hard.value,
        "rows": rows,
        "ratio_spread": spread,
        "bounded": spread <= 10.0,
        "gaps_decreasing": all(a["gap_to_hard"] > b["gap_to_hard"] for a, b in zip(rows, rows[1:])),
    }
    _write_table(out / "rate_zeta.csv", rows, ("zeta", "value", "gap_to_hard"))
    return ExperimentResult(summary, converged)


def run_check_order(config: ExperimentConfig, out: Optional[Path] = None) -> ExperimentResult:
    mu, nu = load_measure_csv(config.mu), load_measure_csv(config.nu)
    rep = convex_order_1d(mu, nu).as_dict()
    nd = nondegeneracy_check(mu, nu)
    rep["nondegenerate"] = nd.ok
    rep["hull_distance"] = nd.distance
    return ExperimentResult(rep)


def random_coupling_1d(rng: np.random.Generator, n_x: int, n_y: int) -> Coupling:
    mu = DiscreteMeasure(rng.uniform(-1.0, 1.0, n_x), rng.uniform(0.1, 1.0, n_x))
    nu = DiscreteMeasure(rng.uniform(-1.0, 1.0, n_y), rng.uniform(0.1, 1.0, n_y))
    # iterative proportional fitting of a random positive matrix onto (mu, nu)
    P = rng.uniform(0.0, 1.0, (mu.size, nu.size)) ** 3
    for _ in range(500):
        P *= (mu.weights / P.sum(axis=1))[:, None]
        P *= (nu.weights / P.sum(axis=0))[None, :]
    return Coupling(mu, nu, P)


def run_sliced_test(config: ExperimentConfig, out: Path) -> ExperimentResult:
    rng = np.random.default_rng(config.seed)
    worst = {"marginal": 0.0, "entropy_slack": math.inf, "w_inf_slack": math.inf}
    failures = 0
    for _ in range(config.samples):
        pi = random_coupling_1d(rng, config.n_points, config.n_points + 3)
        for delta in DELTA_GRID:
            sl = sliced_approximation(pi, delta)
            marg = max(
                np.abs(sl.row_sums() - pi.row_sums()).max(),
                np.abs(sl.col_sums() - pi.col_sums()).max(),
            )
            bound = sliced_entropy_bound(delta, 1, pi.col_measure.diam_inf())
            ent_slack = bound - relative_entropy(sl)
            w_inf = max(
                w_infinity_distance_1d(pi.disintegrate(i), sl.disintegrate(i))
                for i in range(pi.row_measure.size)
            )
            worst["marginal"] = max(worst["marginal"], float(marg))
            worst["entropy_slack"] = min(worst["entropy_slack"], float(ent_slack))
            worst["w_inf_slack"] = min(worst["w_inf_slack"], float(delta - w_inf))
            failures += int(marg > 1e-12 or ent_slack < 0 or w_inf > delta)
    summary = {"samples": config.samples, "deltas": list(DELTA_GRID), "worst": worst, "failures": failures}
    return ExperimentResult(summary, failures == 0)


def _write_table(path: Path, rows, columns) -> None:
    lines = [",".join(columns)]
    lines += [",".join(repr(float(r[c])) for c in columns) for r in rows]
    path.write_text("\n".join(lines) + "\n")


_RUNNERS = {
    "brenier_strassen": run_brenier_strassen,
    "left_curtain": run_left_curtain,
    "solve": run_solve,
    "rate_study_eps": run_rate_study_eps,
    "rate_study_zeta": run_rate_study_zeta,
    "check_order": run_check_order,
    "sliced_test": run_sliced_test,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment and write ``summary.json`` plus per-cell artifacts."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = _RUNNERS[config.experiment](config, out)
    cfg = asdict(config)
    cfg["t_grid"] = list(config.t_grid)
    # keep artifacts independent of where they are written
    del cfg["output_dir"]
    write_json({"config": cfg, "converged": result.converged, "result": result.summary}, out / "summary.json")
    return result
