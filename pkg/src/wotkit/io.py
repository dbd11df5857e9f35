"""Reading problem descriptions from JSON and writing solver artifacts.

A problem file is a JSON object::

    {
      "mu": {"points": [...], "weights": [...]}  or  {"csv": "mu.csv"},
      "nu": ...,
      "cost": {"kind": "squared_euclidean"} | {"matrix": [[...]]} | {"npy": "c.npy"} | {"csv": "c.csv"},
      "f": {"kind": "displacement"} | {"npy": "f.npy"} | {"csv": "f.csv", "shape": [nx, ny, m]},
      "g": ...,
      "theta": {"kind": "quadratic", "scale": 1.0},
      "theta_tilde": {"kind": "quadratic", "scale": 1.0},
      "epsilon": 0.01,
      "zeta": null
    }

Relative paths are resolved against the directory of the JSON file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .measures import Coupling, DiscreteMeasure, load_measure_csv
from .model import GroundCost, MomentTensor, Penalty, ProblemSpec
from .sista import SolveReport

_COSTS = {
    "squared_euclidean": GroundCost.squared_euclidean,
    "euclidean": GroundCost.euclidean,
    "zeros": GroundCost.zeros,
}


def _path(base: Path, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _measure(entry, base: Path) -> DiscreteMeasure:
    if not isinstance(entry, dict):
        raise ConfigError("a measure must be a JSON object")
    if "csv" in entry:
        return load_measure_csv(_path(base, entry["csv"]))
    if "points" not in entry:
        raise ConfigError("a measure needs 'points' (and optionally 'weights') or 'csv'")
    pts = np.asarray(entry["points"], dtype=float)
    if "weights" in entry:
        return DiscreteMeasure(pts, np.asarray(entry["weights"], dtype=float))
    return DiscreteMeasure.uniform(pts)


def _array(entry, base: Path, shape=None) -> np.ndarray:
    if "matrix" in entry:
        return np.asarray(entry["matrix"], dtype=float)
    if "npy" in entry:
        return np.load(_path(base, entry["npy"]), allow_pickle=False)
    if "csv" in entry:
        a = np.loadtxt(_path(base, entry["csv"]), delimiter=",", ndmin=2)
        shape = entry.get("shape", shape)
        return a.reshape(shape) if shape is not None else a
    raise ConfigError(f"cannot read an array from keys {sorted(entry)}")


def _moment(entry, mu, nu, base: Path):
    if entry is None:
        return None
    if entry.get("kind") == "displacement":
        return MomentTensor.displacement(mu, nu)
    if entry.get("kind") == "none":
        return None
    return MomentTensor(_array(entry, base))


def _penalty(entry):
    if entry is None:
        return None
    if entry.get("kind", "quadratic") != "quadratic":
        raise ConfigError("only quadratic penalties can be described in a problem file")
    return Penalty.quadratic(float(entry.get("scale", 1.0)))


def spec_from_dict(data: dict, base_dir=".") -> ProblemSpec:
    base = Path(base_dir)
    try:
        mu = _measure(data["mu"], base)
        nu = _measure(data["nu"], base)
        cost_entry = data.get("cost", {"kind": "squared_euclidean"})
        if "kind" in cost_entry:
            if cost_entry["kind"] not in _COSTS:
                raise ConfigError(f"unknown cost kind {cost_entry['kind']!r}")
            cost = _COSTS[cost_entry["kind"]](mu, nu)
        else:
            cost = GroundCost(_array(cost_entry, base, (mu.size, nu.size)))
        return ProblemSpec(
            mu,
            nu,
            cost,
            f=_moment(data.get("f"), mu, nu, base),
            g=_moment(data.get("g"), mu, nu, base),
            theta=_penalty(data.get("theta")),
            theta_tilde=_penalty(data.get("theta_tilde")),
            epsilon=float(data.get("epsilon", 1e-2)),
            zeta=None if data.get("zeta") is None else float(data["zeta"]),
            label=str(data.get("label", "")),
        )
    except KeyError as exc:
        raise ConfigError(f"problem file is missing {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_spec(path) -> ProblemSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read problem file {path}: {exc}") from exc
    return spec_from_dict(data, path.parent)


def save_coupling_csv(pi: Coupling, path) -> None:
    """Dense matrix, one row per mu-atom, full double precision."""
    np.savetxt(path, pi.matrix, delimiter=",", fmt="%.17g")


def load_coupling_csv(path, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    return Coupling(mu, nu, np.loadtxt(path, delimiter=",", ndmin=2))


def report_record(report: SolveReport, spec: ProblemSpec, **extra) -> dict:
    out = {
        "epsilon": spec.epsilon,
        "zeta": spec.zeta,
        "iterations": report.iterations,
        "converged": report.converged,
        "marginal_residual": report.marginal_residual,
        "moment_residual": report.moment_residual,
        "duality_gap": report.duality_gap,
        "dual_value": report.dual_value,
        "primal": report.primal_breakdown.as_dict(),
        "alpha_sup_norm": report.alpha_sup_norm,
        "newton_steps": report.newton_steps,
        "step_too_large": report.step_too_large,
        "warnings": list(report.warnings),
    }
    out.update(extra)
    return out


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
