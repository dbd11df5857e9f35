"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from wotkit import (
    DiscreteMeasure,
    GroundCost,
    MomentTensor,
    Penalty,
    ProblemSpec,
    SolverConfig,
    conditional_moments,
    dual_value,
    gibbs_plan,
    primal_value,
    reference_sinkhorn,
    solve,
    solve_martingale_lp,
    unregularized_value_extrapolation,
)
from wotkit.cli import main
from wotkit.dual import DualState
from wotkit.errors import Infeasible
from wotkit.experiments import (
    EPS_GRID,
    ExperimentConfig,
    random_convex_ordered_pair,
    run_experiment,
)
from wotkit.measures import relative_entropy, save_measure_csv, w_infinity_distance_1d
from wotkit.order import convex_order_1d
from wotkit.sista import phi_half_step, psi_half_step
from wotkit.sliced import sliced_approximation, sliced_entropy_bound

from conftest import ACCEPTANCE_LINES, FAST, zoo
from test_order import _strassen_pairs


def verdict(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_half_step_normalisation():
    rng = np.random.default_rng(1)
    n = 200
    mu = DiscreteMeasure(rng.normal(size=n), rng.uniform(0.2, 1, n))
    nu = DiscreteMeasure(rng.normal(size=n), rng.uniform(0.2, 1, n))
    disp = MomentTensor.displacement(mu, nu)
    spec = ProblemSpec(
        mu, nu, GroundCost.squared_euclidean(mu, nu), f=disp, theta=Penalty.quadratic(1.0),
        g=disp, epsilon=0.05,
    )
    state = DualState(
        rng.normal(size=n), rng.normal(size=n), 0.3 * rng.normal(size=(n, 1)), 0.3 * rng.normal(size=(n, 1))
    )
    t0 = time.perf_counter()
    after_phi = phi_half_step(state, spec)
    rows = gibbs_plan(after_phi, spec).row_sums()
    after_psi = psi_half_step(after_phi, spec)
    cols = gibbs_plan(after_psi, spec).col_sums()
    elapsed = time.perf_counter() - t0
    row_err = float(np.max(np.abs(rows / mu.weights - 1)))
    col_err = float(np.max(np.abs(cols / nu.weights - 1)))
    ok = row_err <= 1e-13 and col_err <= 1e-13 and elapsed < 1.0
    verdict(1, ok, f"row rel err {row_err:.1e}, col rel err {col_err:.1e}, {elapsed:.3f}s")


def test_criterion_02_matches_reference_sinkhorn():
    rng = np.random.default_rng(2)
    worst, t0 = 0.0, time.perf_counter()
    for k in range(20):
        n = 30
        mu = DiscreteMeasure(rng.uniform(size=n), rng.uniform(0.2, 1, n))
        nu = DiscreteMeasure(rng.uniform(size=n), rng.uniform(0.2, 1, n))
        eps = (0.05, 0.1)[k % 2]
        spec = ProblemSpec(mu, nu, rng.uniform(size=(n, n)), epsilon=eps)
        rep = solve(spec)
        ref = reference_sinkhorn(mu, nu, spec.cost, eps)
        worst = max(worst, float(np.max(np.abs(rep.plan.matrix - ref.matrix))))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-8 and elapsed < 30, f"max entrywise diff {worst:.1e}, {elapsed:.1f}s")


def test_criterion_03_strong_duality_on_zoo():
    worst, labels = 0.0, []
    for spec in zoo():
        rep = solve(spec, FAST)
        gap = primal_value(gibbs_plan(rep.final_state, spec), spec, check=False).total - dual_value(
            rep.final_state, spec
        )
        worst = max(worst, abs(gap))
        labels.append(spec.label)
    verdict(3, worst <= 1e-7, f"max |primal - dual| {worst:.1e} over {len(labels)} instances")


def test_criterion_04_soft_moment_optimality():
    rng = np.random.default_rng(4)
    worst = 0.0
    for k in range(10):
        mu, nu = random_convex_ordered_pair(3 + k % 4, 6, rng)
        s = float(rng.uniform(0.2, 2.0))
        spec = ProblemSpec(
            mu, nu, GroundCost.squared_euclidean(mu, nu), f=MomentTensor.barycentric(mu, nu),
            theta=Penalty.quadratic(s), epsilon=0.05,
        )
        rep = solve(spec, FAST)
        u = conditional_moments(rep.plan, spec.f)
        worst = max(worst, float(np.max(np.abs(rep.final_state.lam - spec.theta.grad(u)))))
    verdict(4, worst <= 1e-5, f"max |lambda - grad theta(moment)| {worst:.1e}")


def test_criterion_05_hard_mode_against_lp():
    rng = np.random.default_rng(5)
    shapes = [(3, 5), (4, 5), (4, 6), (5, 7), (5, 8), (6, 8), (6, 10), (7, 9), (8, 10), (8, 12)]
    t0 = time.perf_counter()
    worst_ratio, worst_fit = 0.0, 0.0
    for nx, ny in shapes:
        mu, nu = random_convex_ordered_pair(nx, ny, rng)
        cost = GroundCost.euclidean(mu, nu)
        lp = solve_martingale_lp(mu, nu, cost).value
        g = MomentTensor.martingale(mu, nu)
        values, init = [], None
        for eps in sorted(EPS_GRID, reverse=True) + [1e-3]:
            rep = solve(ProblemSpec(mu, nu, cost, g=g, epsilon=eps), FAST, init=init, record_trace=False)
            assert rep.converged
            init = rep.final_state
            values.append((eps, rep.value))
        tol = 3e-3 * math.log(1e3) * max(1.0, float(np.max(np.abs(cost.matrix))))
        worst_ratio = max(worst_ratio, abs(values[-1][1] - lp) / tol)
        fit = unregularized_value_extrapolation(values[:-1])
        worst_fit = max(worst_fit, abs(fit.v0_estimate - lp))
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1.0 and worst_fit <= 2e-2 and elapsed < 120
    verdict(
        5, ok,
        f"worst |v(1e-3) - LP| / tol {worst_ratio:.3f}, worst intercept error {worst_fit:.1e}, {elapsed:.1f}s",
    )


def test_criterion_06_epsilon_rate(tmp_path):
    cfg = ExperimentConfig("rate_study_eps", n_points=5, seed=0, output_dir=str(tmp_path))
    res = run_experiment(cfg).summary
    gaps = [r["gap_to_lp"] for r in res["rows"]]
    r2 = res["fit"]["r_squared"]
    ok = res["gaps_positive"] and res["gaps_decreasing"]
    verdict(
        6, ok,
        f"gaps {', '.join(f'{g:.2e}' for g in gaps)}; positive and decreasing; R^2 = {r2:.4f} (logged, target 0.95)",
    )


def test_criterion_07_zeta_rate(tmp_path):
    cfg = ExperimentConfig("rate_study_zeta", n_points=5, seed=0, output_dir=str(tmp_path))
    res = run_experiment(cfg).summary
    ratios = [r["gap_over_zeta"] for r in res["rows"]]
    ok = res["ratio_spread"] <= 10.0 and min(ratios) > 0
    verdict(7, ok, f"gap/zeta {', '.join(f'{r:.3e}' for r in ratios)}; spread {res['ratio_spread']:.3f}")


def test_criterion_08_sliced_guarantees():
    from wotkit.experiments import random_coupling_1d

    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    worst_marg, worst_ent, worst_w = 0.0, -math.inf, -math.inf
    for _ in range(100):
        pi = random_coupling_1d(rng, int(rng.integers(2, 9)), int(rng.integers(2, 12)))
        for delta in (0.5, 0.2, 0.1):
            sl = sliced_approximation(pi, delta)
            worst_marg = max(
                worst_marg,
                float(np.max(np.abs(sl.row_sums() - pi.row_sums()))),
                float(np.max(np.abs(sl.col_sums() - pi.col_sums()))),
            )
            bound = sliced_entropy_bound(delta, 1, pi.col_measure.diam_inf())
            worst_ent = max(worst_ent, relative_entropy(sl) - bound)
            for i in range(pi.row_measure.size):
                w = w_infinity_distance_1d(pi.disintegrate(i), sl.disintegrate(i))
                worst_w = max(worst_w, w - delta)
    elapsed = time.perf_counter() - t0
    ok = worst_marg <= 1e-12 and worst_ent <= 0 and worst_w <= 0 and elapsed < 10
    verdict(
        8, ok,
        f"marginal err {worst_marg:.1e}, max H - bound {worst_ent:.3f}, max W_inf - delta {worst_w:.3f}, {elapsed:.1f}s",
    )


def test_criterion_09_strassen_equivalence():
    rng = np.random.default_rng(12345)
    agree = ordered = 0
    for mu, nu in _strassen_pairs(rng, 200):
        rep = convex_order_1d(mu, nu).convex_order
        try:
            solve_martingale_lp(mu, nu, np.zeros((mu.size, nu.size)))
            feasible = True
        except Infeasible:
            feasible = False
        agree += rep == feasible
        ordered += rep
    verdict(9, agree == 200, f"{agree}/200 agree ({ordered} ordered, {200 - ordered} not)")


@pytest.mark.slow
def test_criterion_10_desk_scale_reproduction(tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig("brenier_strassen", n_points=200, epsilon=1e-2, output_dir=str(tmp_path / "desk"))
    result = run_experiment(cfg)
    desk = time.perf_counter() - t0
    cells = {c["t"]: c for c in result.summary["cells"]}
    map_err = cells[1.0]["map_w1_to_monotone"]
    bary = cells[0.0]["barycentric_residual"]
    marg = max(c["marginal_residual"] for c in cells.values())

    t1 = time.perf_counter()
    big = ExperimentConfig("brenier_strassen", n_points=1000, epsilon=1e-2, output_dir=str(tmp_path / "large"))
    run_experiment(big)
    large = time.perf_counter() - t1
    files = sorted(p.name for p in (tmp_path / "large").iterdir())
    emitted = len(files) == 11 and all((tmp_path / "large" / f).stat().st_size > 0 for f in files)

    ok = result.converged and map_err <= 0.05 and bary <= 0.05 and marg <= 1e-8 and desk < 300 and emitted
    verdict(
        10, ok,
        f"t=1 map W1 {map_err:.4f}, t=0 barycentre residual {bary:.4f}, marginals {marg:.1e}, "
        f"grid {desk:.1f}s; n=1000 emitted {len(files)} files in {large:.0f}s",
    )


def _run_twice(tmp_path, args, name):
    outs = []
    for k in range(2):
        out = tmp_path / f"{name}{k}"
        assert main(args + ["--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    return outs[0] == outs[1] and len(outs[0]) > 0


def test_criterion_11_determinism(tmp_path, capsys):
    problem = tmp_path / "problem.json"
    problem.write_text(json.dumps({
        "mu": {"points": [-0.5, 0.5]},
        "nu": {"points": [-1.0, 0.0, 1.0]},
        "cost": {"kind": "euclidean"},
        "g": {"kind": "displacement"},
        "epsilon": 0.02,
    }))
    save_measure_csv(DiscreteMeasure.dirac([0.0]), tmp_path / "mu.csv")
    save_measure_csv(DiscreteMeasure.uniform([-1.0, 1.0]), tmp_path / "nu.csv")
    runs = {
        "brenier_strassen": ["--experiment", "brenier_strassen", "--n-points", "40"],
        "left_curtain": ["--experiment", "left_curtain", "--n-points", "40"],
        "solve": ["--experiment", "solve", "--spec", str(problem)],
        "rate_study_eps": ["--experiment", "rate_study_eps"],
        "rate_study_zeta": ["--experiment", "rate_study_zeta"],
        "sliced_test": ["--experiment", "sliced_test", "--samples", "20"],
        "check_order": ["--experiment", "check_order", "--mu", str(tmp_path / "mu.csv"),
                        "--nu", str(tmp_path / "nu.csv")],
    }
    same = {name: _run_twice(tmp_path, args, name) for name, args in runs.items()}
    capsys.readouterr()
    verdict(
        11, all(same.values()),
        "byte-identical reruns: " + ", ".join(f"{k}={'yes' if v else 'NO'}" for k, v in same.items()),
    )
