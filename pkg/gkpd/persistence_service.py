"""
Persistence diagrams of filtered complexes.

Boundary-matrix reduction over Z/2 in filtration order. Columns are kept as
sorted lists of row indices; adding two columns is their symmetric difference.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .filtration_service import FilteredComplex, assert_monotone, facets
from .services import InputError, from_json_safe, json_safe, read_json, write_json

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["degree", "birth", "death"]


class PersistencePair(NamedTuple):
    birth: float
    death: float
    degree: int

    @property
    def persistence(self) -> float:
        return self.death - self.birth

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.death)


def _pair_key(pair: PersistencePair) -> Tuple[int, float, float]:
    return pair.degree, pair.birth, pair.death


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """
    Multiset of (birth, death, degree) points in filtration-value units.

    ``truncated_degree`` marks the degree whose bars never die because the
    complex stops at that dimension; its infinite bars are not topological.
    """
    pairs: Tuple[PersistencePair, ...]
    max_degree: int
    truncated_degree: Optional[int] = None

    def __post_init__(self):
        pairs = []
        for raw in self.pairs:
            pair = PersistencePair(float(raw[0]), float(raw[1]), int(raw[2]))
            if math.isnan(pair.birth) or math.isnan(pair.death) or math.isinf(pair.birth):
                raise InputError(f"invalid diagram point {tuple(raw)}")
            if pair.death < pair.birth:
                raise InputError(f"death before birth: {tuple(raw)}")
            if not 0 <= pair.degree <= self.max_degree:
                raise InputError(f"degree {pair.degree} outside 0..{self.max_degree}")
            pairs.append(pair)
        object.__setattr__(self, "pairs", tuple(sorted(pairs, key=_pair_key)))

    def __len__(self) -> int:
        return len(self.pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return (
            self.max_degree == other.max_degree
            and self.truncated_degree == other.truncated_degree
            and self.pairs == other.pairs
        )

    __hash__ = None

    def in_degree(self, degree: int) -> np.ndarray:
        """(m, 2) array of (birth, death) in the given degree."""
        points = [(p.birth, p.death) for p in self.pairs if p.degree == degree]
        return np.array(points, dtype=np.float64).reshape(-1, 2)

    def infinite_count(self, degree: int) -> int:
        return sum(1 for p in self.pairs if p.degree == degree and p.is_infinite)

    def degrees(self) -> List[int]:
        return list(range(self.max_degree + 1))


def _add_columns(target: List[int], source: List[int]) -> List[int]:
    return sorted(set(target).symmetric_difference(source))


def boundary_columns(complex_: FilteredComplex) -> List[List[int]]:
    """Column j lists the filtration positions of the facets of simplex j, ascending."""
    return [
        sorted(complex_.position(facet) for facet in facets(simplex.vertices))
        for simplex in complex_
    ]


def reduce_boundary(columns: List[List[int]], dims: List[int], clearing: bool = False) -> Dict[int, int]:
    """
    Reduce the boundary matrix and return the pivot map low -> column.

    With ``clearing`` the dimensions are processed top-down and a column is
    skipped once it is known to be the pivot of another one.
    """
    reduced = [list(column) for column in columns]
    pivot_of: Dict[int, int] = {}
    if clearing:
        order: Iterable[int] = sorted(range(len(columns)), key=lambda j: (-dims[j], j))
    else:
        order = range(len(columns))
    cleared = set()
    for j in order:
        if j in cleared:
            reduced[j] = []
            continue
        column = reduced[j]
        while column and column[-1] in pivot_of:
            column = _add_columns(column, reduced[pivot_of[column[-1]]])
        reduced[j] = column
        if column:
            pivot_of[column[-1]] = j
            if clearing:
                cleared.add(column[-1])
    return pivot_of


def compute_persistence(
    complex_: FilteredComplex,
    keep_zero: bool = False,
    clearing: bool = False,
) -> PersistenceDiagram:
    """
    Persistence diagram of a face-closed, monotone filtered complex.

    Args:
        complex_: Filtered complex
        keep_zero: Keep pairs whose birth and death values coincide
        clearing: Skip columns already known to be positive

    Returns:
        PersistenceDiagram with degrees 0..d_max; degree d_max is boundary-truncated
    """
    assert_monotone(complex_)
    simplices = complex_.simplices
    dims = [s.dim for s in simplices]
    pivot_of = reduce_boundary(boundary_columns(complex_), dims, clearing=clearing)

    pairs: List[PersistencePair] = []
    zero_pairs = 0
    for low, j in pivot_of.items():
        pair = PersistencePair(simplices[low].value, simplices[j].value, dims[low])
        if pair.persistence == 0.0 and not keep_zero:
            zero_pairs += 1
            continue
        pairs.append(pair)

    deaths = set(pivot_of.values())
    for i, simplex in enumerate(simplices):
        if i not in pivot_of and i not in deaths:
            pairs.append(PersistencePair(simplex.value, math.inf, dims[i]))

    diagram = PersistenceDiagram(
        tuple(pairs), max_degree=complex_.d_max, truncated_degree=complex_.d_max
    )
    logger.info(
        f"PERSISTENCE_DONE | SIMPLICES: {len(simplices)} | PAIRS: {len(diagram)} | "
        f"ZERO_PAIRS_DROPPED: {0 if keep_zero else zero_pairs} | CLEARING: {clearing}"
    )
    return diagram


def betti_numbers_from_diagram(
    diagram: PersistenceDiagram, value: float, include_truncated: bool = False
) -> List[int]:
    """
    Bars alive at ``value`` (birth <= value < death), per degree.

    Degrees 0..max_degree-1 by default (at least degree 0); the truncated degree
    is added with ``include_truncated``.
    """
    top = diagram.max_degree + 1 if include_truncated else max(diagram.max_degree, 1)
    counts = [0] * top
    for pair in diagram.pairs:
        if pair.degree < top and pair.birth <= value < pair.death:
            counts[pair.degree] += 1
    return counts


def diagram_to_document(diagram: PersistenceDiagram) -> dict:
    return {
        "max_degree": diagram.max_degree,
        "truncated_degree": diagram.truncated_degree,
        "diagrams": [
            {
                "degree": degree,
                "pairs": [
                    [json_safe(p.birth), json_safe(p.death)]
                    for p in diagram.pairs if p.degree == degree
                ],
            }
            for degree in diagram.degrees()
        ],
    }


def diagram_from_document(document: dict) -> PersistenceDiagram:
    try:
        pairs = [
            (from_json_safe(birth), from_json_safe(death), int(entry["degree"]))
            for entry in document["diagrams"]
            for birth, death in entry["pairs"]
        ]
        max_degree = int(document["max_degree"])
        truncated = document.get("truncated_degree")
        truncated = None if truncated is None else int(truncated)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed diagram document: {e}") from e
    return PersistenceDiagram(tuple(pairs), max_degree=max_degree, truncated_degree=truncated)


def write_diagram(path, diagram: PersistenceDiagram) -> None:
    write_json(path, diagram_to_document(diagram))


def read_diagram(path) -> PersistenceDiagram:
    return diagram_from_document(read_json(Path(path)))


def diagram_to_frame(diagram: PersistenceDiagram) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.degree, p.birth, p.death) for p in diagram.pairs], columns=CSV_COLUMNS
    ).astype({"degree": np.int64, "birth": np.float64, "death": np.float64})


def write_diagram_csv(path, diagram: PersistenceDiagram) -> None:
    """CSV with a ``degree,birth,death`` header; infinite deaths are written as ``inf``."""
    diagram_to_frame(diagram).to_csv(path, index=False, float_format="%.17g")


def read_diagram_csv(
    path, max_degree: Optional[int] = None, truncated_degree: Optional[int] = None
) -> PersistenceDiagram:
    try:
        frame = pd.read_csv(
            path,
            dtype={"degree": np.int64, "birth": np.float64, "death": np.float64},
            float_precision="round_trip",
        )
    except (pd.errors.EmptyDataError, ValueError) as e:
        raise InputError(f"malformed diagram file {path}: {e}") from e
    if list(frame.columns) != CSV_COLUMNS:
        raise InputError(f"malformed diagram file {path}: expected columns {CSV_COLUMNS}")
    if max_degree is None:
        max_degree = int(frame["degree"].max()) if len(frame) else 0
    pairs = tuple(
        (float(row.birth), float(row.death), int(row.degree))
        for row in frame.itertuples(index=False)
    )
    return PersistenceDiagram(pairs, max_degree=max_degree, truncated_degree=truncated_degree)
