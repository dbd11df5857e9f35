"""Entropic weak optimal transport with soft and hard moment constraints."""

from .dual import DualState, dual_value, gibbs_plan, shadow_cost, softmin
from .measures import (
    Coupling,
    DiscreteMeasure,
    disintegrate,
    relative_entropy,
    w1_distance_1d,
    w_infinity_distance_1d,
)
from .model import (
    GroundCost,
    MomentTensor,
    Penalty,
    ProblemSpec,
    conditional_moment,
    conditional_moments,
    primal_value,
)
from .experiments import ExperimentConfig, run_experiment
from .io import load_spec, spec_from_dict
from .oracle import reference_sinkhorn, solve_martingale_lp, unregularized_value_extrapolation
from .order import convex_order_1d, irreducibility_probe, median, nondegeneracy_check
from .sista import SolverConfig, SolveReport, auto_step_size, ista_block, sinkhorn_block, solve
from .sliced import sliced_approximation, sliced_entropy_bound

__version__ = "0.1.0"
