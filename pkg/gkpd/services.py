"""
Shared plumbing: environment configuration, exceptions, seeds and file helpers.
"""
import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values, load_dotenv

# Initialize logger
logger = logging.getLogger(__name__)

# Load environment variables from .env file (existing environment wins)
load_dotenv(override=False)

# Configuration defaults from environment variables
DEFAULT_SIGMA = float(os.environ.get("GKPD_SIGMA", 1.0))
DEFAULT_EPSILON = float(os.environ.get("GKPD_EPSILON", 0.25))
DEFAULT_DELTA = float(os.environ.get("GKPD_DELTA", 0.1))
DEFAULT_CONSTANT = float(os.environ.get("GKPD_CONSTANT", 8.0))
DEFAULT_D_MAX = int(os.environ.get("GKPD_D_MAX", 2))
DEFAULT_SLACK = float(os.environ.get("GKPD_SLACK", 0.05))
DEFAULT_SEED = int(os.environ.get("GKPD_SEED", 0))
DEFAULT_THREADS = int(os.environ.get("GKPD_THREADS", 1))
LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")

INF_TOKEN = "inf"

PathLike = Union[str, Path]


class InputError(ValueError):
    """Invalid user input: shapes, ranges, empty sets, malformed documents."""


class IntegrityError(RuntimeError):
    """An internal invariant does not hold (e.g. a non-monotone filtration)."""


def get_array_hash(array: np.ndarray) -> str:
    """Generate a short digest identifying an array in audit logs."""
    data = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    digest = hashlib.sha256(str(data.shape).encode())
    digest.update(data.tobytes())
    return digest.hexdigest()[:16]


def derive_seed(seed: int, component: str) -> int:
    """
    Split one top-level seed into an independent 64-bit seed per component.

    The component name is hashed into the spawn key, so the mapping does not
    depend on the order in which components ask for their seed.
    """
    key = int.from_bytes(hashlib.sha256(component.encode()).digest()[:4], "little")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def as_points(data: Any, name: str = "points") -> np.ndarray:
    """Coerce to a finite 2-D float array with at least one row and column."""
    array = np.asarray(data, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise InputError(f"{name} must be a 2-D matrix, got shape {array.shape}")
    if array.shape[0] == 0:
        raise InputError("empty point set")
    if array.shape[1] == 0:
        raise InputError(f"{name} must have at least one coordinate")
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} contains non-finite values")
    return array


def as_vector(data: Any, name: str = "point") -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    array = np.asarray(data, dtype=np.float64).reshape(-1)
    if array.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} contains non-finite values")
    return array


def frozen(array: np.ndarray) -> np.ndarray:
    """Return a read-only copy."""
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def json_safe(value: float) -> Union[float, str]:
    """Encode +inf as the literal token used by every document we write."""
    if math.isinf(value) and value > 0:
        return INF_TOKEN
    if not math.isfinite(value):
        raise InputError(f"cannot encode {value!r} in a document")
    return float(value)


def from_json_safe(value: Union[float, int, str]) -> float:
    """Decode a value written by json_safe."""
    if isinstance(value, str):
        if value.strip().lower() == INF_TOKEN:
            return math.inf
        raise InputError(f"unexpected token {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"expected a number, got {value!r}")
    return float(value)


def write_json(path: PathLike, document: Dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(document, indent=2, allow_nan=False) + "\n")


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"malformed document {path}: {e}") from e
    if not isinstance(document, dict):
        raise InputError(f"malformed document {path}: top level must be an object")
    return document


def read_points_csv(path: PathLike) -> np.ndarray:
    """Read one point per row, no header."""
    try:
        frame = pd.read_csv(path, header=None, dtype=np.float64, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise InputError("empty point set") from None
    except ValueError as e:
        raise InputError(f"malformed point file {path}: {e}") from e
    return as_points(frame.to_numpy(), name=str(path))


def write_points_csv(path: PathLike, points: np.ndarray) -> None:
    """Write one point per row with round-trip exact, locale-independent floats."""
    frame = pd.DataFrame(np.atleast_2d(np.asarray(points, dtype=np.float64)))
    frame.to_csv(path, header=False, index=False, float_format="%.17g")


def write_vector_csv(path: PathLike, values: np.ndarray) -> None:
    write_points_csv(path, np.asarray(values, dtype=np.float64).reshape(-1, 1))


def read_vector_csv(path: PathLike) -> np.ndarray:
    return read_points_csv(path).reshape(-1)


def load_config_file(path: Optional[PathLike]) -> Dict[str, str]:
    """Parse a plain key=value file; keys are lower-cased, dashes become underscores."""
    if path is None:
        return {}
    if not Path(path).is_file():
        raise InputError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {
        key.strip().lower().replace("-", "_"): value
        for key, value in values.items()
        if value is not None
    }
