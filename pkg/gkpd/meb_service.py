"""
Minimum enclosing balls of weighted points under a power distance.

Both formulations reduce to maximizing the concave dual

    g(lam) = sum_i lam_i (G_ii - w_i) - lam^T G lam

over the probability simplex, where G holds the inner products of the points:
explicit coordinates (after centering) in coordinate mode, the Gaussian Gram
matrix in kernel mode. The optimum g(lam*) is the squared power radius and the
center is sum_i lam*_i p_i.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Literal, Optional, Tuple

import numpy as np
from scipy.optimize import minimize, nnls

from .services import InputError, as_points, frozen

logger = logging.getLogger(__name__)

# Solver constants
MAX_EXACT_VERTICES = 10
FEASIBILITY_TOL = 1e-12
TIE_TOL = 1e-12
CONDITION_LIMIT = 1e12
FW_TOL = 1e-12
FW_MAX_ITER = 100_000
SIMPLEX_TOL = 1e-9

# Brute-force oracle limits
ORACLE_MAX_VERTICES = 8
ORACLE_MAX_DIMENSION = 4

SolverMethod = Literal["auto", "exact", "frank_wolfe"]


@dataclass(frozen=True)
class WeightedSimplex:
    """Vertex indices into a weighted point set."""
    vertices: Tuple[int, ...]

    def __post_init__(self):
        vertices = tuple(int(v) for v in self.vertices)
        if not vertices:
            raise InputError("empty simplex")
        if len(set(vertices)) != len(vertices):
            raise InputError(f"simplex has repeated vertices: {vertices}")
        if min(vertices) < 0:
            raise InputError(f"negative vertex index in {vertices}")
        object.__setattr__(self, "vertices", vertices)

    @property
    def k(self) -> int:
        return len(self.vertices)

    def check_range(self, n: int) -> None:
        if max(self.vertices) >= n:
            raise InputError(f"simplex {self.vertices} out of range for {n} points")


@dataclass(frozen=True, eq=False)
class MebSolution:
    """
    Optimal ball of a weighted simplex.

    ``lam`` are the convex coefficients of the center over the simplex vertices,
    exactly zero off ``support``. ``center`` is only known in coordinate mode.
    ``radius_sq`` may be negative when weights dominate.
    """
    radius_sq: float
    lam: np.ndarray
    support: Tuple[int, ...]
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "lam", frozen(self.lam))
        if self.center is not None:
            object.__setattr__(self, "center", frozen(self.center))


@lru_cache(maxsize=None)
def _support_patterns(k: int) -> Tuple[Tuple[int, ...], ...]:
    """All nonempty subsets of range(k), in lexicographic order."""
    patterns = [c for size in range(1, k + 1) for c in combinations(range(k), size)]
    return tuple(sorted(patterns))


def _dual_values(lam: np.ndarray, inner: np.ndarray, linear: np.ndarray) -> np.ndarray:
    quadratic = np.einsum("mi,mij,mj->m", lam, inner, lam)
    return np.einsum("mi,mi->m", lam, linear) - quadratic


def _solve_exact(inner: np.ndarray, linear: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact dual optimum for a batch of instances by support enumeration.

    For every candidate support S the stationarity conditions
    2 G_SS lam_S + nu 1 = b_S, 1^T lam_S = 1 form one linear system. Every
    solution lying in the simplex is a lower bound on the optimum and the
    optimal support is among the candidates, so the best such value is exact.
    Near-ties keep the lexicographically smallest support.

    Args:
        inner: (m, k, k) inner-product matrices
        linear: (m, k) linear terms G_ii - w_i

    Returns:
        (lam (m, k), values (m,))
    """
    m, k = linear.shape
    best_lam = np.zeros((m, k))
    best_val = np.full(m, -np.inf)

    for pattern in _support_patterns(k):
        idx = np.asarray(pattern)
        s = idx.size
        system = np.zeros((m, s + 1, s + 1))
        system[:, :s, :s] = 2.0 * inner[:, idx[:, None], idx[None, :]]
        system[:, :s, s] = 1.0
        system[:, s, :s] = 1.0
        rhs = np.zeros((m, s + 1))
        rhs[:, :s] = linear[:, idx]
        rhs[:, s] = 1.0

        singular_values = np.linalg.svd(system, compute_uv=False)
        well_posed = singular_values[:, -1] > singular_values[:, 0] / CONDITION_LIMIT
        rows = np.flatnonzero(well_posed)
        if rows.size == 0:
            continue
        solution = np.linalg.solve(system[rows], rhs[rows][..., None])[..., 0]
        coefficients = solution[:, :s]
        feasible = np.all(coefficients >= -FEASIBILITY_TOL, axis=1)
        rows = rows[feasible]
        if rows.size == 0:
            continue

        candidate = np.zeros((rows.size, k))
        candidate[:, idx] = np.clip(coefficients[feasible], 0.0, None)
        candidate /= candidate.sum(axis=1, keepdims=True)
        values = _dual_values(candidate, inner[rows], linear[rows])

        current = best_val[rows]
        margin = np.where(
            np.isfinite(current), TIE_TOL * np.maximum(1.0, np.abs(current)), 0.0
        )
        better = np.isneginf(current) | (values > current + margin)
        chosen = rows[better]
        best_lam[chosen] = candidate[better]
        best_val[chosen] = values[better]

    return best_lam, best_val


def _frank_wolfe(
    inner: np.ndarray,
    linear: np.ndarray,
    initial: Optional[np.ndarray] = None,
    tol: float = FW_TOL,
    max_iter: int = FW_MAX_ITER,
) -> Tuple[np.ndarray, float]:
    """
    Away-step Frank-Wolfe for the dual of one instance, with exact line search.

    Returns:
        (lam, dual value)
    """
    k = linear.size
    if initial is None:
        lam = np.zeros(k)
        lam[int(np.argmax(linear - np.diag(inner)))] = 1.0
    else:
        lam = np.clip(_check_simplex(initial, k), 0.0, None)
        lam = lam / lam.sum()

    for _ in range(max_iter):
        grad = linear - 2.0 * inner @ lam
        value = float(lam @ linear - lam @ inner @ lam)
        toward = int(np.argmax(grad))
        gap = float(grad[toward] - grad @ lam)
        if gap <= tol * max(1.0, abs(value)):
            break

        active = np.flatnonzero(lam > 0.0)
        away = int(active[np.argmin(grad[active])])
        fw_direction = -lam.copy()
        fw_direction[toward] += 1.0
        away_direction = lam.copy()
        away_direction[away] -= 1.0

        if grad @ fw_direction >= grad @ away_direction or lam[away] >= 1.0:
            direction, max_step = fw_direction, 1.0
        else:
            direction, max_step = away_direction, lam[away] / (1.0 - lam[away])

        slope = float(grad @ direction)
        curvature = float(direction @ inner @ direction)
        step = max_step if curvature <= 0.0 else min(max_step, slope / (2.0 * curvature))
        lam = lam + step * direction
        if direction is away_direction and step == max_step:
            lam[away] = 0.0
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum()

    value = float(lam @ linear - lam @ inner @ lam)
    return lam, value


def _polish(inner: np.ndarray, linear: np.ndarray, lam: np.ndarray, value: float) -> Tuple[np.ndarray, float]:
    """Re-solve exactly on the support found by Frank-Wolfe; keep it if it stays optimal."""
    support = np.flatnonzero(lam > SIMPLEX_TOL)
    if support.size > MAX_EXACT_VERTICES:
        return lam, value
    sub_lam, sub_val = _solve_exact(
        inner[np.ix_(support, support)][None], linear[support][None]
    )
    polished = np.zeros_like(lam)
    polished[support] = sub_lam[0]
    grad = linear - 2.0 * inner @ polished
    level = grad @ polished
    optimal = np.all(grad <= level + 1e-9 * max(1.0, abs(level)))
    if optimal and sub_val[0] >= value - 1e-9 * max(1.0, abs(value)):
        return polished, float(sub_val[0])
    return lam, value


def _solve(
    inner: np.ndarray,
    linear: np.ndarray,
    method: SolverMethod = "auto",
    initial: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    k = linear.size
    if method == "auto":
        method = "exact" if k <= MAX_EXACT_VERTICES else "frank_wolfe"
    if method == "exact":
        lam, values = _solve_exact(inner[None], linear[None])
        return lam[0], float(values[0])
    if method == "frank_wolfe":
        lam, value = _frank_wolfe(inner, linear, initial=initial)
        return _polish(inner, linear, lam, value)
    raise InputError(f"unknown solver method: {method}")


def _solution(lam: np.ndarray, value: float, center: Optional[np.ndarray] = None) -> MebSolution:
    lam = np.where(lam > 0.0, lam, 0.0)
    support = tuple(int(i) for i in np.flatnonzero(lam))
    return MebSolution(radius_sq=float(value), lam=lam, support=support, center=center)


def _check_weights(weights, k: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size != k:
        raise InputError(f"got {weights.size} weights for {k} vertices")
    if not np.all(np.isfinite(weights)):
        raise InputError("weights contain non-finite values")
    return weights


def _check_simplex(lam, k: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if lam.size != k:
        raise InputError(f"lambda has {lam.size} entries, expected {k}")
    if np.any(lam < -SIMPLEX_TOL) or abs(lam.sum() - 1.0) > SIMPLEX_TOL:
        raise InputError("lambda is not in the probability simplex")
    return lam


def meb_coordinates(
    points,
    weights,
    method: SolverMethod = "auto",
    initial: Optional[np.ndarray] = None,
) -> MebSolution:
    """
    Ball minimizing max_i ||x - p_i||^2 - w_i over x, with explicit center.

    Args:
        points: k x t matrix, one vertex per row
        weights: length-k weights
        method: "exact" enumerates supports, "frank_wolfe" iterates from ``initial``
        initial: starting coefficients for Frank-Wolfe

    Returns:
        MebSolution with center
    """
    points = as_points(points, "simplex")
    weights = _check_weights(weights, points.shape[0])
    origin = points.mean(axis=0)
    centered = points - origin
    inner = centered @ centered.T
    linear = np.einsum("ij,ij->i", centered, centered) - weights
    lam, value = _solve(inner, linear, method=method, initial=initial)
    solution = _solution(lam, value)
    center = solution.lam @ centered + origin
    return MebSolution(solution.radius_sq, solution.lam, solution.support, center)


def meb_gram(
    gram,
    weights,
    method: SolverMethod = "auto",
    initial: Optional[np.ndarray] = None,
) -> MebSolution:
    """
    Ball of lifted weighted points given only their Gram matrix.

    Maximizes 1 - sum_i lam_i w_i - lam^T K lam; the center stays implicit.
    """
    inner = np.asarray(getattr(gram, "entries", gram), dtype=np.float64)
    if inner.ndim != 2 or inner.shape[0] != inner.shape[1] or inner.shape[0] == 0:
        raise InputError(f"Gram matrix must be square and nonempty, got shape {inner.shape}")
    if not np.allclose(inner, inner.T, rtol=0.0, atol=1e-12):
        raise InputError("Gram matrix is not symmetric")
    if not np.allclose(np.diag(inner), 1.0, rtol=0.0, atol=1e-9):
        raise InputError("Gram matrix must have a unit diagonal")
    weights = _check_weights(weights, inner.shape[0])
    linear = np.diag(inner) - weights
    lam, value = _solve(inner, linear, method=method, initial=initial)
    return _solution(lam, value)


def decomposition_radius(lam, pairwise_power) -> float:
    """(1/2) lam^T D lam over all vertex pairs, diagonal terms -2 w_i included."""
    matrix = np.asarray(pairwise_power, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"power distances must be square, got shape {matrix.shape}")
    lam = _check_simplex(lam, matrix.shape[0])
    return 0.5 * float(lam @ matrix @ lam)


def coordinate_power_matrix(points, weights) -> np.ndarray:
    """D_ij = ||p_i - p_j||^2 - w_i - w_j."""
    points = as_points(points)
    weights = _check_weights(weights, points.shape[0])
    difference = points[:, None, :] - points[None, :, :]
    sqdist = np.einsum("ijk,ijk->ij", difference, difference)
    return sqdist - weights[:, None] - weights[None, :]


def variance_identity(points, lam) -> Tuple[float, float]:
    """
    Both sides of sum_i lam_i ||c - p_i||^2 = (1/2) sum_ij lam_i lam_j ||p_i - p_j||^2.

    c is the lam-weighted mean of the points.
    """
    points = as_points(points)
    lam = _check_simplex(lam, points.shape[0])
    center = lam @ points
    lhs = float(lam @ np.sum((points - center) ** 2, axis=1))
    rhs = decomposition_radius(lam, coordinate_power_matrix(points, np.zeros(points.shape[0])))
    return lhs, rhs


def meb_radii_batch(inner, weights, simplices) -> np.ndarray:
    """
    Squared power radii of many simplices over one shared inner-product matrix.

    Args:
        inner: n x n inner products (Gram matrix, or centered coordinate products)
        weights: length-n weights
        simplices: m x k vertex indices

    Returns:
        Length-m squared radii
    """
    inner = np.asarray(inner, dtype=np.float64)
    weights = _check_weights(weights, inner.shape[0])
    simplices = np.asarray(simplices, dtype=np.intp)
    if simplices.ndim != 2:
        raise InputError(f"simplices must be an m x k array, got shape {simplices.shape}")
    m, k = simplices.shape
    if m == 0:
        return np.zeros(0)
    for row in simplices.tolist():
        WeightedSimplex(tuple(row)).check_range(inner.shape[0])
    blocks = inner[simplices[:, :, None], simplices[:, None, :]]
    linear = np.diag(inner)[simplices] - weights[simplices]
    if k <= MAX_EXACT_VERTICES:
        _, values = _solve_exact(blocks, linear)
        return values
    return np.array([_solve(blocks[i], linear[i])[1] for i in range(m)])


def _max_power(grid: np.ndarray, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    difference = grid[:, None, :] - points[None, :, :]
    return np.max(np.einsum("gkd,gkd->gk", difference, difference) - weights[None, :], axis=1)


def _epigraph_refine(start: np.ndarray, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Minimize r subject to ||x - p_i||^2 - w_i <= r with SLSQP, from a grid node."""
    dimension = points.shape[1]

    def constraints(z):
        x, r = z[:dimension], z[dimension]
        return r - (np.sum((x - points) ** 2, axis=1) - weights)

    def constraints_jacobian(z):
        x = z[:dimension]
        jac = np.empty((points.shape[0], dimension + 1))
        jac[:, :dimension] = -2.0 * (x - points)
        jac[:, dimension] = 1.0
        return jac

    objective_gradient = np.zeros(dimension + 1)
    objective_gradient[dimension] = 1.0
    z0 = np.append(start, _max_power(start[None, :], points, weights)[0])
    result = minimize(
        lambda z: z[dimension],
        z0,
        jac=lambda z: objective_gradient,
        constraints=[{"type": "ineq", "fun": constraints, "jac": constraints_jacobian}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return result.x[:dimension]


def meb_oracle(points, weights, resolution: int = 17, rounds: int = 8) -> MebSolution:
    """
    Brute-force ball for cross-checking the dual solver.

    A dense grid over the bounding box (which contains the center) is re-gridded
    around its best node for a few rounds; the best node then seeds a generic
    constrained solve of the primal epigraph problem. Only for small k and dimension.
    """
    points = as_points(points, "simplex")
    k, dimension = points.shape
    weights = _check_weights(weights, k)
    if k > ORACLE_MAX_VERTICES or dimension > ORACLE_MAX_DIMENSION:
        raise InputError(
            f"oracle limited to {ORACLE_MAX_VERTICES} vertices in "
            f"{ORACLE_MAX_DIMENSION} dimensions, got {k} in {dimension}"
        )
    if k == 1:
        return MebSolution(-float(weights[0]), np.ones(1), (0,), points[0].copy())

    low = points.min(axis=0)
    high = points.max(axis=0)
    best = (low + high) / 2.0
    half_width = np.maximum(high - low, 1e-12) / 2.0
    for _ in range(rounds):
        axes = [np.linspace(c - h, c + h, resolution) for c, h in zip(best, half_width)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dimension)
        best = grid[int(np.argmin(_max_power(grid, points, weights)))]
        half_width = half_width / 2.0

    refined = _epigraph_refine(best, points, weights)
    grid_value = float(_max_power(best[None, :], points, weights)[0])
    refined_value = float(_max_power(refined[None, :], points, weights)[0])
    if refined_value < grid_value:
        best, radius_sq = refined, refined_value
    else:
        radius_sq = grid_value

    # Coefficients: nonnegative fit of the center over the vertices attaining the max.
    powers = np.sum((points - best) ** 2, axis=1) - weights
    active = np.flatnonzero(powers >= radius_sq - 1e-6 * max(1.0, abs(radius_sq)))
    design = np.vstack([points[active].T, 1e3 * np.ones(active.size)])
    target = np.concatenate([best, [1e3]])
    coefficients, _ = nnls(design, target)
    lam = np.zeros(k)
    if coefficients.sum() > 0:
        lam[active] = coefficients / coefficients.sum()
    else:
        lam[active] = 1.0 / active.size
    return MebSolution(radius_sq, lam, tuple(int(i) for i in np.flatnonzero(lam)), best)
