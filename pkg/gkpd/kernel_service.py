"""
Gaussian kernel geometry for point clouds.

Provides the Gaussian kernel, the kernel distance, the kernel distance to the
empirical measure of a point set, the kernel weight function and the power
distance built from them (the Gaussian kernel power distance, GKPD).

All pairwise squared distances are accumulated coordinate-wise with
``scipy.spatial.distance`` (no norm-expansion tricks), so every output is
invariant under rigid motions up to rounding.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist, pdist, squareform

from .services import InputError, IntegrityError, as_points, as_vector, frozen

logger = logging.getLogger(__name__)

# Absolute tolerance used when checking stored weights against the points
WEIGHT_CHECK_TOL = 1e-10


class KernelConfig(BaseModel):
    """Bandwidth of the Gaussian kernel, in the units of the point coordinates."""
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., gt=0)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """K_ij = K(p_i, p_j); stands in for inner products of the lifted points."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InputError(f"Gram matrix must be square, got shape {entries.shape}")
        object.__setattr__(self, "entries", frozen(entries))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def submatrix(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp)
        return self.entries[np.ix_(idx, idx)]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


def _check_same_dimension(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise InputError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}"
        )


def _kernel_from_sqdist(sqdist: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    return np.exp(-sqdist / (2.0 * cfg.sigma ** 2))


def gaussian_kernel(x, y, cfg: KernelConfig) -> float:
    """K(x, y) = exp(-||x - y||^2 / 2 sigma^2)."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    _check_same_dimension(x, y)
    sqdist = float(np.sum((x - y) ** 2))
    return float(_kernel_from_sqdist(sqdist, cfg))


def kernel_distance_sq(x, y, cfg: KernelConfig) -> float:
    """D_K^2(x, y) = 2 (1 - K(x, y)), in [0, 2)."""
    return 2.0 * (1.0 - gaussian_kernel(x, y, cfg))


def cross_kernel(P, Q, cfg: KernelConfig) -> np.ndarray:
    """Kernel matrix between two point sets."""
    P = as_points(P, "P")
    Q = as_points(Q, "Q")
    _check_same_dimension(P, Q)
    return _kernel_from_sqdist(cdist(P, Q, "sqeuclidean"), cfg)


def kappa(P, Q, cfg: KernelConfig) -> float:
    """Mean of K over the product P x Q (the kernel inner product of the two empirical measures)."""
    return float(np.mean(cross_kernel(P, Q, cfg)))


def gram(points, cfg: KernelConfig) -> GramMatrix:
    points = as_points(points)
    sqdist = squareform(pdist(points, "sqeuclidean"))
    return GramMatrix(_kernel_from_sqdist(sqdist, cfg))


def kernel_distance_matrix(points, cfg: KernelConfig) -> np.ndarray:
    """Pairwise D_K^2 with an exactly zero diagonal."""
    entries = gram(points, cfg).entries
    distances = 2.0 * (1.0 - entries)
    np.fill_diagonal(distances, 0.0)
    return distances


def weights_from_squared_distances(sqdist: np.ndarray) -> np.ndarray:
    """
    Weight function of a point set given its pairwise squared distances.

    w(p) = -( mean_y d(p, y) - (1 / 2|P|^2) sum_{x,y} d(x, y) ), which is minus the
    squared distance from p to the mean of the set, hence never positive.

    Args:
        sqdist: Symmetric n x n matrix of squared distances with zero diagonal

    Returns:
        Length-n vector of weights
    """
    sqdist = np.asarray(sqdist, dtype=np.float64)
    if sqdist.ndim != 2 or sqdist.shape[0] != sqdist.shape[1]:
        raise InputError(f"squared distances must be square, got shape {sqdist.shape}")
    n = sqdist.shape[0]
    if n == 0:
        raise InputError("empty point set")
    row_means = sqdist.sum(axis=1) / n
    grand = sqdist.sum() / (2.0 * n * n)
    # Rounding can leave a positive residue of order 1e-17.
    return np.minimum(-(row_means - grand), 0.0)


def kernel_weights(points, cfg: KernelConfig) -> np.ndarray:
    """w(p) := -D_K^2(mu, p) for every row of ``points``."""
    points = as_points(points)
    return weights_from_squared_distances(kernel_distance_matrix(points, cfg))


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    """
    Points, their kernel weights and the kernel they were computed with.

    The empirical measure is uniform over rows (duplicates add multiplicity).
    Weights depend on the whole set, so they are computed here and nowhere else;
    passing weights explicitly only re-checks them.
    """
    points: np.ndarray
    config: KernelConfig
    weights: Optional[np.ndarray] = None
    gram: GramMatrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = as_points(self.points)
        gram_matrix = gram(points, self.config)
        distances = 2.0 * (1.0 - gram_matrix.entries)
        np.fill_diagonal(distances, 0.0)
        expected = weights_from_squared_distances(distances)
        if self.weights is not None:
            given = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if given.shape != expected.shape:
                raise IntegrityError(
                    f"weights have length {given.size}, expected {expected.size}"
                )
            if not np.allclose(given, expected, rtol=0.0, atol=WEIGHT_CHECK_TOL):
                raise IntegrityError("weights do not match the kernel weights of the points")
        object.__setattr__(self, "points", frozen(points))
        object.__setattr__(self, "weights", frozen(expected))
        object.__setattr__(self, "gram", gram_matrix)

    @classmethod
    def from_points(cls, points, config: KernelConfig) -> "WeightedPointCloud":
        return cls(points=points, config=config)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def _query(self, x) -> np.ndarray:
        x = as_vector(x, "x")
        if x.size != self.dimension:
            raise InputError(f"dimension mismatch: {x.size} vs {self.dimension}")
        return x


def dist_to_measure_sq(x, cloud: WeightedPointCloud) -> float:
    """D_K^2(mu, delta_x) = kappa(P, P) + 1 - 2 kappa(P, {x})."""
    x = cloud._query(x)
    self_term = float(np.mean(cloud.gram.entries))
    cross_term = kappa(cloud.points, x.reshape(1, -1), cloud.config)
    return max(self_term + 1.0 - 2.0 * cross_term, 0.0)


def power_distance(i: int, j: int, cloud: WeightedPointCloud) -> float:
    """D(p_i^, p_j^) = D_K^2(p_i, p_j) - w(p_i) - w(p_j); defined for i == j."""
    n = cloud.n
    for index in (i, j):
        if not (0 <= int(index) < n):
            raise InputError(f"index {index} out of range for {n} points")
    i, j = int(i), int(j)
    distance = 0.0 if i == j else 2.0 * (1.0 - cloud.gram.entries[i, j])
    return float(distance - cloud.weights[i] - cloud.weights[j])


def power_distance_matrix(cloud: WeightedPointCloud) -> np.ndarray:
    distances = 2.0 * (1.0 - cloud.gram.entries)
    np.fill_diagonal(distances, 0.0)
    return distances - cloud.weights[:, None] - cloud.weights[None, :]


def gkpd_argmin(x, cloud: WeightedPointCloud) -> Tuple[float, int]:
    """
    Evaluate the squared GKPD at x and report which point attains it.

    Returns:
        (min_p D_K^2(x, p) - w(p), index of the minimizing p; lowest index on ties)
    """
    x = cloud._query(x)
    kernel_row = cross_kernel(cloud.points, x.reshape(1, -1), cloud.config)[:, 0]
    values = 2.0 * (1.0 - kernel_row) - cloud.weights
    index = int(np.argmin(values))
    return float(values[index]), index


def gkpd_eval(x, cloud: WeightedPointCloud) -> float:
    """f(x)^2 := min_p (D_K^2(x, p) - w(p))."""
    value, _ = gkpd_argmin(x, cloud)
    return value
