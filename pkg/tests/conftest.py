import numpy as np
import pytest

from wotkit import DiscreteMeasure, GroundCost, MomentTensor, Penalty, ProblemSpec, SolverConfig
from wotkit.experiments import random_convex_ordered_pair

# acceptance lines collected here are echoed in the terminal summary
ACCEPTANCE_LINES = []

FAST = SolverConfig(polish="newton", polish_after=300)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def convex_ordered_nd(n_x, n_y, d, rng):
    """Same construction as the 1D helper, in d dimensions."""
    y = rng.uniform(-2.0, 2.0, (n_y, d))
    K = rng.uniform(0.2, 1.0, (n_x, n_y))
    K /= K.sum(axis=1, keepdims=True)
    w = rng.uniform(0.5, 1.5, n_x)
    w /= w.sum()
    return DiscreteMeasure(K @ y, w), DiscreteMeasure(y, w @ K)


def zoo(epsilon=0.05):
    """Tiny instances covering plain OT, soft, hard and penalized moments."""
    rng = np.random.default_rng(2024)
    out = []
    for k, (nx, ny) in enumerate([(3, 4), (4, 6), (5, 7)]):
        mu, nu = random_convex_ordered_pair(nx, ny, rng)
        cost = GroundCost.euclidean(mu, nu)
        disp = MomentTensor.displacement(mu, nu)
        out += [
            ProblemSpec(mu, nu, cost, epsilon=epsilon, label=f"ot{k}"),
            ProblemSpec(mu, nu, cost, g=disp, epsilon=epsilon, label=f"hard{k}"),
            ProblemSpec(
                mu, nu, cost, g=disp, theta_tilde=Penalty.quadratic(1.0), zeta=0.1,
                epsilon=epsilon, label=f"zeta{k}",
            ),
            ProblemSpec(
                mu, nu, GroundCost.squared_euclidean(mu, nu), f=disp,
                theta=Penalty.quadratic(0.5), epsilon=epsilon, label=f"soft{k}",
            ),
            ProblemSpec(
                mu, nu, cost, f=disp, theta=Penalty.quadratic(2.0), g=disp,
                theta_tilde=Penalty.quadratic(0.5), zeta=0.3, epsilon=epsilon, label=f"both{k}",
            ),
        ]
    mu, nu = convex_ordered_nd(3, 5, 2, rng)
    out.append(
        ProblemSpec(
            mu, nu, GroundCost.euclidean(mu, nu), g=MomentTensor.martingale(mu, nu),
            epsilon=epsilon, label="hard2d",
        )
    )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_point():
    """mu = delta_0, nu = (delta_-1 + delta_1) / 2."""
    return DiscreteMeasure.dirac([0.0]), DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
