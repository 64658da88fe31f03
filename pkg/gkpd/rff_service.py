"""
Random Fourier Features embedding for the Gaussian kernel.

Samples frequency vectors, maps points into t dimensions so that squared image
distances estimate D_K^2 without bias, sizes t from the target distortion,
recomputes the kernel weights in the image and audits the distortion.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.distance import pdist, squareform

from . import kernel_service
from .kernel_service import KernelConfig, WeightedPointCloud
from .services import (
    InputError,
    as_points,
    frozen,
    read_json,
    write_json,
)

logger = logging.getLogger(__name__)

# Hidden constant of the target-dimension bound
DEFAULT_CONSTANT = 8.0
# Pairs whose kernel distance is below this are treated as coincident
ZERO_DISTANCE_TOL = 1e-15
# Relative tolerance on the stored feature scale sqrt(2/t)
SCALE_TOL = 1e-15

DimensionMode = Literal["point-count", "diameter"]


@dataclass(frozen=True, eq=False)
class RffMap:
    """
    A sampled feature map R^D -> R^t.

    omega has t/2 rows; row i is the frequency of block i, whose two output
    coordinates are scale * (cos <omega_i, x>, sin <omega_i, x>).
    """
    omega: np.ndarray
    sigma: float
    t: int
    seed: int
    scale: float

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64)
        if omega.ndim != 2:
            raise InputError(f"omega must be a matrix, got shape {omega.shape}")
        _check_target(self.t)
        if omega.shape[0] != self.t // 2:
            raise InputError(f"omega has {omega.shape[0]} rows, expected {self.t // 2}")
        if not self.sigma > 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")
        if not math.isclose(self.scale, math.sqrt(2.0 / self.t), rel_tol=SCALE_TOL, abs_tol=0.0):
            raise InputError(f"scale {self.scale} does not match sqrt(2/t) for t={self.t}")
        object.__setattr__(self, "omega", frozen(omega))

    @property
    def input_dimension(self) -> int:
        return self.omega.shape[1]


class TargetDimensionRequest(BaseModel):
    """Parameters of the target-dimension bound; one mode's parameters are required."""
    model_config = ConfigDict(frozen=True)

    mode: DimensionMode = "point-count"
    n: Optional[int] = Field(None, gt=0)
    diameter_ratio: Optional[float] = Field(None, gt=0)
    dimension: Optional[int] = Field(None, gt=0)
    epsilon: float = Field(..., gt=0, le=1)
    delta: float = Field(..., gt=0, lt=1)
    constant: float = Field(DEFAULT_CONSTANT, gt=0)

    @model_validator(mode="after")
    def _check_mode_parameters(self):
        if self.mode == "point-count" and self.n is None:
            raise ValueError("point-count mode requires n")
        if self.mode == "diameter" and (self.diameter_ratio is None or self.dimension is None):
            raise ValueError("diameter mode requires diameter_ratio and dimension")
        return self


class DistortionReport(BaseModel):
    """
    Relative errors of the embedding against the kernel geometry.

    Pair errors are indexed like ``pairs`` (i < j); pairs at zero kernel distance
    are left out because their relative error is undefined. Weight errors are
    null where the original weight is exactly zero.
    """
    epsilon: float
    max_rel_error: float
    fraction_within: float
    pairs: List[List[int]]
    pair_rel_errors: List[float]
    weight_rel_errors: List[Optional[float]]
    max_weight_rel_error: float
    power_rel_errors: List[float]
    max_power_rel_error: float
    distance_certified: bool
    power_certified: bool
    excluded_pairs: int


@dataclass(frozen=True, eq=False)
class WeightedImageCloud:
    """Points in R^t with weights recomputed from their own Euclidean geometry."""
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = as_points(self.points)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.size != points.shape[0]:
            raise InputError(f"got {weights.size} weights for {points.shape[0]} points")
        object.__setattr__(self, "points", frozen(points))
        object.__setattr__(self, "weights", frozen(weights))

    @classmethod
    def from_images(cls, images) -> "WeightedImageCloud":
        images = as_points(images, "images")
        return cls(points=images, weights=recompute_weights(images))

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _check_target(t: int) -> None:
    if int(t) != t or t < 2 or t % 2:
        raise InputError(f"target dimension must be an even integer >= 2, got {t}")


def sample_rff(D: int, t: int, cfg: KernelConfig, seed: int) -> RffMap:
    """
    Draw t/2 independent frequencies from N_D(0, sigma^-2 I).

    Uses a PCG64 generator seeded with ``seed``, so equal seeds give identical maps.
    """
    if int(D) != D or D < 1:
        raise InputError(f"input dimension must be a positive integer, got {D}")
    _check_target(t)
    D, t = int(D), int(t)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    omega = rng.standard_normal((t // 2, D)) / cfg.sigma
    return RffMap(omega=omega, sigma=cfg.sigma, t=t, seed=int(seed), scale=math.sqrt(2.0 / t))


def apply_rff(rff_map: RffMap, x) -> np.ndarray:
    """
    Embed one point (1-D input) or a batch of points (one per row).

    Every image has squared norm 1.
    """
    array = np.asarray(x, dtype=np.float64)
    single = array.ndim == 1
    points = as_points(array, "x")
    if points.shape[1] != rff_map.input_dimension:
        raise InputError(
            f"dimension mismatch: {points.shape[1]} vs {rff_map.input_dimension}"
        )
    phases = points @ rff_map.omega.T
    blocks = np.stack((np.cos(phases), np.sin(phases)), axis=-1)
    images = rff_map.scale * blocks.reshape(points.shape[0], rff_map.t)
    return images[0] if single else images


def _round_up_even(value: float) -> int:
    t = max(int(math.ceil(value)), 2)
    return t + (t % 2)


def target_dimension(req: TargetDimensionRequest) -> int:
    """
    Smallest even t meeting the distortion bound with the given constant.

    point-count: C eps^-2 ln(n / delta); diameter: C eps^-2 D ln(r D / (eps delta)).
    """
    if req.mode == "point-count":
        raw = req.constant * req.epsilon ** -2 * math.log(req.n / req.delta)
    else:
        ratio = req.diameter_ratio * req.dimension / (req.epsilon * req.delta)
        raw = req.constant * req.epsilon ** -2 * req.dimension * math.log(ratio)
    t = _round_up_even(raw)
    logger.info(
        f"TARGET_DIMENSION | MODE: {req.mode} | C: {req.constant} | "
        f"N: {req.n} | R: {req.diameter_ratio} | D: {req.dimension} | "
        f"EPSILON: {req.epsilon} | DELTA: {req.delta} | RAW: {raw:.6f} | T: {t}"
    )
    return t


def image_squared_distances(images) -> np.ndarray:
    images = as_points(images, "images")
    return squareform(pdist(images, "sqeuclidean"))


def recompute_weights(images) -> np.ndarray:
    """Kernel-weight formula applied to squared Euclidean distances of the images."""
    return kernel_service.weights_from_squared_distances(image_squared_distances(images))


def embed_cloud(cloud: WeightedPointCloud, rff_map: RffMap) -> WeightedImageCloud:
    return WeightedImageCloud.from_images(apply_rff(rff_map, cloud.points))


def _relative_errors(estimate: np.ndarray, reference: np.ndarray) -> np.ndarray:
    return np.abs(estimate - reference) / np.abs(reference)


def distortion_report(
    cloud: WeightedPointCloud,
    rff_map: RffMap,
    epsilon: float = 0.25,
) -> DistortionReport:
    """
    Compare the embedded cloud with the original kernel geometry.

    Args:
        cloud: Original weighted cloud
        rff_map: Map to audit
        epsilon: Threshold for ``fraction_within`` and the certified flags

    Returns:
        DistortionReport over all pairs i < j with nonzero kernel distance
    """
    if rff_map.input_dimension != cloud.dimension:
        raise InputError(
            f"dimension mismatch: map expects {rff_map.input_dimension}, cloud has {cloud.dimension}"
        )
    image = embed_cloud(cloud, rff_map)
    kernel_sq = kernel_service.kernel_distance_matrix(cloud.points, cloud.config)
    image_sq = image_squared_distances(image.points)

    rows, cols = np.triu_indices(cloud.n, k=1)
    reference = kernel_sq[rows, cols]
    keep = reference > ZERO_DISTANCE_TOL
    rows, cols, reference = rows[keep], cols[keep], reference[keep]
    pair_errors = _relative_errors(image_sq[rows, cols], reference)

    weights = np.asarray(cloud.weights)
    nonzero = weights != 0.0
    weight_errors = np.full(cloud.n, np.nan)
    weight_errors[nonzero] = _relative_errors(image.weights[nonzero], weights[nonzero])

    kernel_power = kernel_service.power_distance_matrix(cloud)
    image_power = image_sq - image.weights[:, None] - image.weights[None, :]
    prow, pcol = np.triu_indices(cloud.n, k=0)
    power_reference = kernel_power[prow, pcol]
    power_keep = power_reference > ZERO_DISTANCE_TOL
    power_errors = _relative_errors(
        image_power[prow, pcol][power_keep], power_reference[power_keep]
    )

    max_rel = float(pair_errors.max()) if pair_errors.size else 0.0
    within = float(np.mean(pair_errors < epsilon)) if pair_errors.size else 1.0
    max_weight = float(np.nanmax(weight_errors)) if nonzero.any() else 0.0
    max_power = float(power_errors.max()) if power_errors.size else 0.0

    report = DistortionReport(
        epsilon=epsilon,
        max_rel_error=max_rel,
        fraction_within=within,
        pairs=[[int(i), int(j)] for i, j in zip(rows, cols)],
        pair_rel_errors=pair_errors.tolist(),
        weight_rel_errors=[None if np.isnan(e) else float(e) for e in weight_errors],
        max_weight_rel_error=max_weight,
        power_rel_errors=power_errors.tolist(),
        max_power_rel_error=max_power,
        distance_certified=max_rel < epsilon,
        power_certified=max_power < epsilon,
        excluded_pairs=int((~keep).sum()),
    )
    logger.info(
        f"DISTORTION_REPORT | T: {rff_map.t} | SEED: {rff_map.seed} | "
        f"MAX_REL: {max_rel:.6f} | MAX_WEIGHT_REL: {max_weight:.6f} | "
        f"MAX_POWER_REL: {max_power:.6f} | EXCLUDED: {report.excluded_pairs}"
    )
    return report


def rff_map_to_document(rff_map: RffMap) -> dict:
    return {
        "sigma": float(rff_map.sigma),
        "t": int(rff_map.t),
        "seed": int(rff_map.seed),
        "scale": float(rff_map.scale),
        "omega": rff_map.omega.tolist(),
    }


def rff_map_from_document(document: dict) -> RffMap:
    try:
        return RffMap(
            omega=np.asarray(document["omega"], dtype=np.float64),
            sigma=float(document["sigma"]),
            t=int(document["t"]),
            seed=int(document["seed"]),
            scale=float(document["scale"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed map document: {e}") from e


def save_rff_map(path, rff_map: RffMap) -> None:
    write_json(path, rff_map_to_document(rff_map))


def load_rff_map(path) -> RffMap:
    return rff_map_from_document(read_json(Path(path)))
