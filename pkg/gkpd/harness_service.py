"""
Synthetic datasets and brute-force oracles for filtered complexes.
"""
import logging
import math
from collections import Counter
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .filtration_service import FilteredComplex, facets
from .services import get_array_hash

logger = logging.getLogger(__name__)

DatasetKind = Literal["circle_with_outliers", "gaussian_clusters", "uniform_cube", "embedded_circle_highD"]


class DatasetSpec(BaseModel):
    """Parameters of a synthetic point cloud; ``n`` counts points before outliers are appended."""
    model_config = ConfigDict(frozen=True)

    kind: DatasetKind
    n: int = Field(..., gt=0)
    dim: int = Field(2, ge=1)
    noise: float = Field(0.0, ge=0)
    outliers: int = Field(0, ge=0)
    seed: int = Field(0, ge=0)
    radius: float = Field(1.0, gt=0)
    clusters: int = Field(3, gt=0)

    @model_validator(mode="after")
    def _check_dimension(self):
        if self.kind in ("circle_with_outliers", "embedded_circle_highD") and self.dim < 2:
            raise ValueError(f"{self.kind} needs dim >= 2")
        return self


def _circle(n: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n) / n
    return radius * np.column_stack((np.cos(angles), np.sin(angles)))


def _rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniformly random orthogonal matrix (QR of a Gaussian matrix, signs fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate(spec: DatasetSpec) -> np.ndarray:
    """
    Deterministic point cloud for a DatasetSpec.

    Args:
        spec: Dataset parameters

    Returns:
        (n + outliers) x dim matrix
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.kind in ("circle_with_outliers", "embedded_circle_highD"):
        points = np.zeros((spec.n, spec.dim))
        points[:, :2] = _circle(spec.n, spec.radius)
        if spec.kind == "embedded_circle_highD":
            points = points @ _rotation(rng, spec.dim).T
    elif spec.kind == "gaussian_clusters":
        centers = rng.uniform(-spec.radius, spec.radius, size=(spec.clusters, spec.dim))
        points = centers[np.arange(spec.n) % spec.clusters]
    else:
        points = rng.uniform(-spec.radius, spec.radius, size=(spec.n, spec.dim))

    if spec.noise > 0:
        points = points + spec.noise * rng.standard_normal(points.shape)
    if spec.outliers:
        box = 2.0 * spec.radius
        points = np.vstack([points, rng.uniform(-box, box, size=(spec.outliers, spec.dim))])

    logger.info(
        f"DATASET_GENERATED | KIND: {spec.kind} | N: {spec.n} | DIM: {spec.dim} | "
        f"OUTLIERS: {spec.outliers} | SEED: {spec.seed} | HASH: {get_array_hash(points)}"
    )
    return points


def _gf2_rank(rows: List[int]) -> int:
    """Rank over Z/2 of vectors stored as integer bitmasks."""
    basis: Dict[int, int] = {}
    for row in rows:
        while row:
            top = row.bit_length() - 1
            if top not in basis:
                basis[top] = row
                break
            row ^= basis[top]
    return len(basis)


class _Chains:
    """Simplices of a complex grouped by dimension, with boundaries as bitmasks."""

    def __init__(self, complex_: FilteredComplex):
        self.by_dim: Dict[int, List[Tuple[Tuple[int, ...], float]]] = {}
        for simplex in complex_:
            self.by_dim.setdefault(simplex.dim, []).append((simplex.vertices, simplex.value))
        self.bit: Dict[Tuple[int, ...], int] = {}
        for members in self.by_dim.values():
            for position, (vertices, _) in enumerate(members):
                self.bit[vertices] = position

    def simplices(self, dim: int, value: float) -> List[Tuple[int, ...]]:
        return [v for v, f in self.by_dim.get(dim, []) if f <= value]

    def boundaries(self, dim: int, value: float) -> List[int]:
        if dim == 0:
            return []
        return [
            sum(1 << self.bit[face] for face in facets(vertices))
            for vertices in self.simplices(dim, value)
        ]

    def mask(self, dim: int, value: float) -> int:
        return sum(1 << self.bit[v] for v in self.simplices(dim, value))


def betti_oracle(complex_: FilteredComplex, value: float, max_degree: Optional[int] = None) -> List[int]:
    """
    Betti numbers over Z/2 of the sublevel complex at ``value``.

    Degrees 0..max_degree; by default every degree below d_max (at least degree 0).
    """
    if max_degree is None:
        max_degree = max(complex_.d_max, 1) - 1
    chains = _Chains(complex_)
    betti = []
    for k in range(max_degree + 1):
        cycles = len(chains.simplices(k, value)) - _gf2_rank(chains.boundaries(k, value))
        betti.append(cycles - _gf2_rank(chains.boundaries(k + 1, value)))
    return betti


def persistent_betti(complex_: FilteredComplex, a: float, b: float, degree: int) -> int:
    """
    Rank of the map H_degree(K_a) -> H_degree(K_b) induced by inclusion, a <= b.

    Equals dim Z(K_a) - dim(B(K_b) restricted to chains of K_a); the second term
    is rank B(K_b) minus the rank of B(K_b) projected off the chains of K_a.
    """
    chains = _Chains(complex_)
    cycles = len(chains.simplices(degree, a)) - _gf2_rank(chains.boundaries(degree, a))
    boundaries = chains.boundaries(degree + 1, b)
    outside = ~chains.mask(degree, a)
    shared = _gf2_rank(boundaries) - _gf2_rank([row & outside for row in boundaries])
    return cycles - shared


def diagram_oracle(complex_: FilteredComplex, degree: int) -> Counter:
    """
    Multiset of (birth, death) pairs in one degree, by inclusion-exclusion of persistent Betti numbers.

    Zero-persistence pairs are not reported.
    """
    values = critical_values(complex_)
    m = len(values)

    def beta(i: int, j: int) -> int:
        # index 0 is the empty complex; index m + 1 stands for +inf
        if i == 0:
            return 0
        return persistent_betti(complex_, values[i - 1], values[min(j, m) - 1], degree)

    pairs: Counter = Counter()
    for i in range(1, m + 1):
        for j in range(i + 1, m + 1):
            count = beta(i, j - 1) - beta(i, j) - beta(i - 1, j - 1) + beta(i - 1, j)
            if count:
                pairs[(values[i - 1], values[j - 1])] += count
        essential = beta(i, m) - beta(i - 1, m)
        if essential:
            pairs[(values[i - 1], math.inf)] += essential
    return pairs


def critical_values(complex_: FilteredComplex) -> List[float]:
    return sorted({s.value for s in complex_})


def euler_characteristic(complex_: FilteredComplex, value: float) -> int:
    return sum((-1) ** s.dim for s in complex_ if s.value <= value)
