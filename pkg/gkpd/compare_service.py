"""
Comparison of persistence diagrams.

Bottleneck distance by binary search over candidate costs with a perfect
bipartite matching test, the multiplicative factor (bottleneck distance of the
log-transformed diagrams) and the interleaving certificate built on it.
"""
import bisect
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .persistence_service import PersistenceDiagram
from .services import DEFAULT_SLACK, InputError, json_safe

logger = logging.getLogger(__name__)

# (index into diagram A, index into diagram B); None stands for the diagonal
MatchedPair = Tuple[Optional[int], Optional[int]]


class DegreeCertificate(BaseModel):
    degree: int
    factor: float
    points_a: int
    points_b: int
    excluded_points: int
    matching: List[MatchedPair]


class InterleavingCertificate(BaseModel):
    """Outcome of the multiplicative interleaving check on the squared-radius scale."""
    model_config = ConfigDict(populate_by_name=True)

    epsilon: float
    slack: float
    factor_measured: float
    factor_bound: float
    threshold: float
    alpha_factor: float
    passed: bool = Field(..., alias="pass")
    excluded_points: int
    degrees: List[DegreeCertificate]

    def to_document(self) -> dict:
        document = self.model_dump(by_alias=True)
        for key in ("factor_measured", "alpha_factor"):
            document[key] = json_safe(document[key])
        for entry in document["degrees"]:
            entry["factor"] = json_safe(entry["factor"])
            entry["matching"] = [list(pair) for pair in entry["matching"]]
        return document


def _diagonal_costs(points: np.ndarray) -> np.ndarray:
    return (points[:, 1] - points[:, 0]) / 2.0


def _finite_matching(a: np.ndarray, b: np.ndarray) -> Tuple[float, List[MatchedPair]]:
    """Bottleneck matching of finite points; each side may use the diagonal."""
    n, m = len(a), len(b)
    if n + m == 0:
        return 0.0, []
    size = n + m
    cost = np.full((size, size), math.inf)
    if n and m:
        cost[:n, :m] = np.maximum(
            np.abs(a[:, None, 0] - b[None, :, 0]), np.abs(a[:, None, 1] - b[None, :, 1])
        )
    cost[np.arange(n), m + np.arange(n)] = _diagonal_costs(a)
    cost[n + np.arange(m), np.arange(m)] = _diagonal_costs(b)
    cost[n:, m:] = 0.0

    candidates = np.unique(cost[np.isfinite(cost)]).tolist()

    def feasible(threshold: float) -> bool:
        graph = csr_matrix(cost <= threshold)
        return bool((maximum_bipartite_matching(graph, perm_type="column") != -1).all())

    best = candidates[bisect.bisect_left(candidates, True, key=feasible)]
    columns = maximum_bipartite_matching(csr_matrix(cost <= best), perm_type="column")

    matching: List[MatchedPair] = []
    for row, column in enumerate(columns):
        if row < n:
            matching.append((row, int(column) if column < m else None))
        elif column < m:
            matching.append((None, int(column)))
    return float(best), matching


def _infinite_matching(a_births: np.ndarray, b_births: np.ndarray) -> Tuple[float, List[Tuple[int, int]]]:
    """Essential bars pair up in birth order; the caller checks the counts agree."""
    if a_births.size == 0:
        return 0.0, []
    order_a = np.argsort(a_births, kind="stable")
    order_b = np.argsort(b_births, kind="stable")
    cost = float(np.max(np.abs(a_births[order_a] - b_births[order_b])))
    return cost, [(int(i), int(j)) for i, j in zip(order_a, order_b)]


def _points(diagram, degree: int) -> np.ndarray:
    if isinstance(diagram, PersistenceDiagram):
        return diagram.in_degree(degree)
    return np.asarray(diagram, dtype=np.float64).reshape(-1, 2)


def _match_points(a: np.ndarray, b: np.ndarray) -> Tuple[float, List[MatchedPair]]:
    a_inf, b_inf = np.isinf(a[:, 1]), np.isinf(b[:, 1])
    if a_inf.sum() != b_inf.sum():
        return math.inf, []
    a_finite, b_finite = np.flatnonzero(~a_inf), np.flatnonzero(~b_inf)
    a_essential, b_essential = np.flatnonzero(a_inf), np.flatnonzero(b_inf)

    finite_cost, finite_pairs = _finite_matching(a[a_finite], b[b_finite])
    essential_cost, essential_pairs = _infinite_matching(a[a_essential, 0], b[b_essential, 0])

    matching: List[MatchedPair] = [
        (None if i is None else int(a_finite[i]), None if j is None else int(b_finite[j]))
        for i, j in finite_pairs
    ]
    matching.extend((int(a_essential[i]), int(b_essential[j])) for i, j in essential_pairs)
    return max(finite_cost, essential_cost), matching


def bottleneck_matching(diag_a, diag_b, degree: int = 0) -> Tuple[float, List[MatchedPair]]:
    """
    Bottleneck distance in one degree together with an optimal matching.

    Indices in the matching refer to rows of ``diagram.in_degree(degree)``.
    Unequal numbers of infinite bars give (+inf, []).
    """
    return _match_points(_points(diag_a, degree), _points(diag_b, degree))


def bottleneck(diag_a, diag_b, degree: int = 0) -> float:
    """Bottleneck distance (L-infinity ground cost, diagonal allowed) in one degree."""
    distance, _ = bottleneck_matching(diag_a, diag_b, degree)
    return distance


def _log_points(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Log-transform the points with positive birth; also return their row indices."""
    kept = np.flatnonzero(points[:, 0] > 0.0)
    return np.log(points[kept]), kept


def _multiplicative(a: np.ndarray, b: np.ndarray) -> Tuple[float, List[MatchedPair], int]:
    if len(a) + len(b) == 0:
        return 1.0, [], 0
    log_a, kept_a = _log_points(a)
    log_b, kept_b = _log_points(b)
    excluded = (len(a) - len(kept_a)) + (len(b) - len(kept_b))
    if len(kept_a) + len(kept_b) == 0:
        raise InputError("multiplicative factor undefined: no point has a positive birth")
    if excluded:
        logger.warning(f"NONPOSITIVE_BIRTHS_EXCLUDED | COUNT: {excluded}")
    distance, pairs = _match_points(log_a, log_b)
    matching: List[MatchedPair] = [
        (None if i is None else int(kept_a[i]), None if j is None else int(kept_b[j]))
        for i, j in pairs
    ]
    return math.exp(distance), matching, excluded


def multiplicative_factor(diag_a, diag_b, degree: int = 0) -> float:
    """
    Smallest beta such that the diagrams match with every point moving by a factor in [1/beta, beta].

    Computed as exp of the bottleneck distance between the diagrams mapped by
    (b, d) -> (ln b, ln d). Points with birth <= 0 are left out.

    Raises:
        InputError: the diagrams have points but none with a positive birth
    """
    factor, _, _ = _multiplicative(_points(diag_a, degree), _points(diag_b, degree))
    return factor


def certify_interleaving(
    diag_a: PersistenceDiagram,
    diag_b: PersistenceDiagram,
    epsilon: float,
    slack: float = DEFAULT_SLACK,
    degrees: Optional[Sequence[int]] = None,
) -> InterleavingCertificate:
    """
    Check the multiplicative interleaving bound (1 - epsilon)^-1 (1 + slack) in every degree.

    Args:
        diag_a: Reference diagram (kernel power distance)
        diag_b: Diagram to certify (embedded cloud)
        epsilon: Distortion parameter in (0, 1)
        slack: Relative allowance on top of (1 - epsilon)^-1
        degrees: Degrees to check; by default every degree below the truncated one

    Returns:
        InterleavingCertificate with per-degree factors and matchings
    """
    epsilon, slack = float(epsilon), float(slack)
    if not 0.0 < epsilon < 1.0:
        raise InputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if slack < 0.0:
        raise InputError(f"slack must be nonnegative, got {slack}")
    if degrees is None:
        degrees = range(max(min(diag_a.max_degree, diag_b.max_degree), 1))

    factor_bound = 1.0 / (1.0 - epsilon)
    threshold = factor_bound * (1.0 + slack)
    entries = []
    for degree in degrees:
        a, b = diag_a.in_degree(degree), diag_b.in_degree(degree)
        factor, matching, excluded = _multiplicative(a, b)
        entries.append(DegreeCertificate(
            degree=int(degree),
            factor=float(factor),
            points_a=len(a),
            points_b=len(b),
            excluded_points=int(excluded),
            matching=matching,
        ))
        logger.info(f"INTERLEAVING_DEGREE | DEGREE: {degree} | FACTOR: {factor:.6f} | EXCLUDED: {excluded}")

    measured = max((entry.factor for entry in entries), default=1.0)
    certificate = InterleavingCertificate(
        epsilon=epsilon,
        slack=slack,
        factor_measured=measured,
        factor_bound=factor_bound,
        threshold=threshold,
        alpha_factor=math.sqrt(measured),
        passed=bool(measured <= threshold),
        excluded_points=sum(entry.excluded_points for entry in entries),
        degrees=entries,
    )
    logger.info(
        f"INTERLEAVING_CERTIFICATE | EPSILON: {epsilon} | SLACK: {slack} | "
        f"FACTOR: {measured:.6f} | THRESHOLD: {threshold:.6f} | PASS: {certificate.passed}"
    )
    return certificate
