"""
Weighted Cech filtrations.

Every simplex up to ``d_max`` gets the squared power radius of its minimum
enclosing ball as filtration value, either under the Gaussian kernel power
distance (kernel mode, Gram matrix) or under the Euclidean power distance of
embedded points with recomputed weights (euclidean mode, coordinates).
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import meb_service
from .kernel_service import WeightedPointCloud
from .rff_service import WeightedImageCloud
from .services import DEFAULT_D_MAX, InputError, IntegrityError, get_array_hash

logger = logging.getLogger(__name__)

FiltrationMode = Literal["gkpd", "euclidean"]

# Simplices handed to one worker when radii are computed in parallel
CHUNK_SIZE = 4096


class Simplex(NamedTuple):
    vertices: Tuple[int, ...]
    value: float

    @property
    def dim(self) -> int:
        return len(self.vertices) - 1


class MonotonicityError(IntegrityError):
    """A face enters the filtration after one of its cofaces."""

    def __init__(self, face: Simplex, simplex: Simplex):
        super().__init__(
            f"face {face.vertices} (value {face.value!r}) comes after "
            f"simplex {simplex.vertices} (value {simplex.value!r})"
        )
        self.face = face
        self.simplex = simplex


def filtration_key(simplex: Simplex) -> Tuple[float, int, Tuple[int, ...]]:
    """Total order: value, then dimension, then vertices lexicographically."""
    return simplex.value, len(simplex.vertices), simplex.vertices


@dataclass(frozen=True, eq=False)
class FilteredComplex:
    """Simplices in filtration order, with the dimension bound they were built with."""
    simplices: Tuple[Simplex, ...]
    d_max: int
    _index: Dict[Tuple[int, ...], int] = field(init=False, repr=False)

    def __post_init__(self):
        ordered = tuple(sorted(
            (Simplex(tuple(sorted(int(v) for v in s[0])), float(s[1])) for s in self.simplices),
            key=filtration_key,
        ))
        index: Dict[Tuple[int, ...], int] = {}
        for position, simplex in enumerate(ordered):
            if simplex.vertices in index:
                raise IntegrityError(f"duplicate simplex {simplex.vertices}")
            index[simplex.vertices] = position
        object.__setattr__(self, "simplices", ordered)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.simplices)

    def __iter__(self) -> Iterator[Simplex]:
        return iter(self.simplices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FilteredComplex):
            return NotImplemented
        return self.d_max == other.d_max and self.simplices == other.simplices

    __hash__ = None

    def position(self, vertices: Iterable[int]) -> int:
        return self._index[tuple(vertices)]

    def value(self, vertices: Iterable[int]) -> float:
        return self.simplices[self._index[tuple(vertices)]].value

    def __contains__(self, vertices) -> bool:
        return tuple(vertices) in self._index

    @property
    def dimension(self) -> int:
        return max((s.dim for s in self.simplices), default=-1)

    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.simplices])


def facets(vertices: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    """Codimension-one faces, in vertex order with vertex i removed from the i-th."""
    if len(vertices) == 1:
        return []
    return [vertices[:i] + vertices[i + 1:] for i in range(len(vertices))]


def assert_monotone(complex_: FilteredComplex) -> None:
    """
    Check face closure and f(face) <= f(simplex) for every facet.

    Raises:
        IntegrityError: a facet is missing
        MonotonicityError: a facet has a larger value than its simplex
    """
    for simplex in complex_:
        for facet in facets(simplex.vertices):
            if facet not in complex_:
                raise IntegrityError(f"facet {facet} of {simplex.vertices} is missing")
            face = complex_.simplices[complex_.position(facet)]
            if face.value > simplex.value:
                raise MonotonicityError(face, simplex)


def _inner_products(
    cloud: Union[WeightedPointCloud, WeightedImageCloud], mode: FiltrationMode
) -> np.ndarray:
    if mode == "gkpd":
        if not isinstance(cloud, WeightedPointCloud):
            raise InputError("gkpd mode needs a WeightedPointCloud")
        return np.asarray(cloud.gram.entries)
    if mode == "euclidean":
        if not isinstance(cloud, WeightedImageCloud):
            raise InputError("euclidean mode needs a WeightedImageCloud")
        centered = cloud.points - cloud.points.mean(axis=0)
        return centered @ centered.T
    raise InputError(f"unknown filtration mode: {mode}")


def _radii(inner: np.ndarray, weights: np.ndarray, candidates: np.ndarray, threads: int) -> np.ndarray:
    if threads <= 1 or len(candidates) <= CHUNK_SIZE:
        return meb_service.meb_radii_batch(inner, weights, candidates)
    chunks = [candidates[i:i + CHUNK_SIZE] for i in range(0, len(candidates), CHUNK_SIZE)]
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(meb_service.meb_radii_batch)(inner, weights, chunk) for chunk in chunks
    )
    return np.concatenate(results)


def build_filtration(
    cloud: Union[WeightedPointCloud, WeightedImageCloud],
    d_max: int = DEFAULT_D_MAX,
    value_cap: Optional[float] = None,
    mode: Optional[FiltrationMode] = None,
    threads: int = 1,
) -> FilteredComplex:
    """
    Weighted Cech filtration of a cloud up to dimension ``d_max``.

    Args:
        cloud: Kernel cloud (gkpd mode) or embedded cloud with recomputed weights (euclidean mode)
        d_max: Largest simplex dimension
        value_cap: Drop simplices whose squared power radius exceeds this
        mode: "gkpd" or "euclidean"; inferred from the cloud type when omitted
        threads: Workers for the radius computations

    Returns:
        Face-closed, monotone FilteredComplex
    """
    if mode is None:
        mode = "gkpd" if isinstance(cloud, WeightedPointCloud) else "euclidean"
    if int(d_max) != d_max or d_max < 0:
        raise InputError(f"d_max must be a nonnegative integer, got {d_max}")
    d_max = int(d_max)
    cap = math.inf if value_cap is None else float(value_cap)

    inner = _inner_products(cloud, mode)
    weights = np.asarray(cloud.weights, dtype=np.float64)
    n = weights.size
    logger.info(
        f"FILTRATION_START | MODE: {mode} | N: {n} | D_MAX: {d_max} | "
        f"CAP: {cap} | INPUT_HASH: {get_array_hash(cloud.points)}"
    )

    values: Dict[Tuple[int, ...], float] = {}
    for i in range(n):
        value = -float(weights[i]) + 0.0  # no negative zero
        if value <= cap:
            values[(i,)] = value

    for dim in range(1, min(d_max, n - 1) + 1):
        candidates = [
            c for c in combinations(range(n), dim + 1)
            if all(facet in values for facet in facets(c))
        ]
        if not candidates:
            break
        radii = _radii(inner, weights, np.array(candidates, dtype=np.intp), threads)
        for vertices, radius in zip(candidates, radii):
            value = max(float(radius), max(values[f] for f in facets(vertices)))
            if value <= cap:
                values[vertices] = value
        logger.info(f"FILTRATION_DIMENSION | DIM: {dim} | CANDIDATES: {len(candidates)}")

    result = FilteredComplex(tuple(values.items()), d_max=d_max)
    assert_monotone(result)
    logger.info(f"FILTRATION_DONE | MODE: {mode} | SIMPLICES: {len(result)}")
    return result


def sublevel(complex_: FilteredComplex, value: float) -> FilteredComplex:
    """Simplices with filtration value <= ``value``."""
    kept = tuple(s for s in complex_ if s.value <= value)
    return FilteredComplex(kept, d_max=complex_.d_max)


def alpha_value(value: float) -> float:
    """Filtration value on the alpha (unsquared) scale."""
    return math.sqrt(max(value, 0.0))


def simplex_distortion(reference: FilteredComplex, other: FilteredComplex) -> pd.DataFrame:
    """
    Per-simplex ratio other/reference over the simplices both complexes contain.

    Simplices with a zero reference value are left out.
    """
    rows = []
    for simplex in reference:
        if simplex.vertices not in other or simplex.value == 0.0:
            continue
        other_value = other.value(simplex.vertices)
        rows.append({
            "vertices": simplex.vertices,
            "dim": simplex.dim,
            "reference_value": simplex.value,
            "other_value": other_value,
            "ratio": other_value / simplex.value,
        })
    return pd.DataFrame(
        rows, columns=["vertices", "dim", "reference_value", "other_value", "ratio"]
    )


def write_complex(path, complex_: FilteredComplex) -> None:
    """One line per simplex in filtration order: ``dim  v0 v1 ... vk  value``."""
    lines = [f"# d_max={complex_.d_max}"]
    for simplex in complex_:
        vertices = " ".join(str(v) for v in simplex.vertices)
        lines.append(f"{simplex.dim}  {vertices}  {simplex.value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_complex(path) -> FilteredComplex:
    d_max: Optional[int] = None
    simplices = []
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, setting = line[1:].strip().partition("=")
            if key.strip() == "d_max":
                d_max = int(setting)
            continue
        fields = line.split()
        try:
            dim = int(fields[0])
            vertices = tuple(int(v) for v in fields[1:-1])
            value = float(fields[-1])
        except (IndexError, ValueError) as e:
            raise InputError(f"{path}:{number}: malformed simplex line {raw!r}") from e
        if len(vertices) != dim + 1:
            raise InputError(f"{path}:{number}: dimension {dim} with {len(vertices)} vertices")
        simplices.append((vertices, value))
    if d_max is None:
        d_max = max((len(v) - 1 for v, _ in simplices), default=0)
    return FilteredComplex(tuple(simplices), d_max=d_max)
