"""Grid-sliced approximation of a coupling.

Within every cube ``delta * ([i_1, i_1 + 1) x ... x [i_d, i_d + 1))`` the
conditional law of each row is replaced by nu restricted to the cube and
rescaled to carry the same mass. Marginals are preserved exactly and the
relative entropy becomes bounded in terms of ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .measures import Coupling


@dataclass(frozen=True)
class SlicedGrid:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"grid step must be positive, got {self.delta}")

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Integer cell of every point, lower-closed cells anchored at the origin."""
        return np.floor(np.atleast_2d(points) / self.delta).astype(np.int64)

    def cell_labels(self, points: np.ndarray) -> np.ndarray:
        """Consecutive integer label per occupied cell."""
        _, labels = np.unique(self.cell_index(points), axis=0, return_inverse=True)
        return labels.ravel()


def sliced_approximation(pi: Coupling, delta: float) -> Coupling:
    nu = pi.col_measure
    labels = SlicedGrid(delta).cell_labels(nu.points)
    n_cells = labels.max() + 1
    onehot = np.zeros((nu.size, n_cells))
    onehot[np.arange(nu.size), labels] = 1.0
    cell_nu = nu.weights @ onehot
    row_cell_mass = pi.matrix @ onehot
    share = np.divide(
        nu.weights, cell_nu[labels], out=np.zeros_like(nu.weights), where=cell_nu[labels] > 0
    )
    return Coupling(pi.row_measure, nu, row_cell_mass[:, labels] * share[None, :])


def sliced_entropy_bound(delta: float, d: int, diam_inf: float) -> float:
    """``-d ln(delta) + d ln(diam_inf + 1)``, the entropy ceiling of the sliced coupling."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if diam_inf < 0:
        raise DomainError("diameter must be nonnegative")
    return -d * math.log(delta) + d * math.log(diam_inf + 1.0)
