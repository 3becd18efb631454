"""
Helper functions and utilities for hydrosplit.

Argument validation shared by the public operations, seed resolution for
randomised test fields, and the chunked worker-pool map used by assembly
and refinement studies.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterator, List, Optional, Tuple, TypeVar

import numpy as np
import scipy.sparse as sp

from .exceptions import ValidationError

T = TypeVar("T")

SEED_ENV_VAR = "HYDROSPLIT_SEED"

# Elements per assembly chunk. Fixed (not derived from the worker count) so the
# order in which triplets are merged, and hence every summed value, is the same
# for any number of workers.
CHUNK_SIZE = 2048


def validate_positive(value: Any, name: str) -> float:
    """Validate a strictly positive finite scalar.

    Args:
        value: The value to validate.
        name: Parameter name used in the error message.

    Returns:
        The value as a float.

    Raises:
        ValidationError: If the value is not a positive finite number.
    """
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise ValidationError(f"{name} must be a number, got {type(value).__name__}")
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")
    return float(value)


def validate_count(value: Any, name: str, minimum: int = 0) -> int:
    """Validate an integer count bounded from below.

    Raises:
        ValidationError: If the value is not an integer ``>= minimum``.
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def resolve_seed(seed: Optional[int] = None) -> int:
    """Resolve the random seed from the argument or the environment.

    Resolution order: explicit ``seed``, then ``HYDROSPLIT_SEED``, then 0.

    Raises:
        ValidationError: If the environment variable is not an integer.
    """
    if seed is not None:
        return validate_count(seed, "seed")

    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed is not None and env_seed.strip():
        try:
            return validate_count(int(env_seed), SEED_ENV_VAR)
        except ValueError:
            raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    return 0


def default_rng(seed: Optional[int] = None) -> np.random.Generator:
    """numpy Generator seeded through :func:`resolve_seed`."""
    return np.random.default_rng(resolve_seed(seed))


def chunk_ranges(count: int, size: int = CHUNK_SIZE) -> Iterator[Tuple[int, int]]:
    """Yield ``(start, stop)`` slices covering ``range(count)``."""
    for start in range(0, count, size):
        yield start, min(start + size, count)


def ordered_map(
    func: Callable[[T], Any], items: List[T], workers: int = 1
) -> List[Any]:
    """Apply ``func`` to ``items`` on up to ``workers`` threads.

    Results come back in input order whatever the completion order.
    """
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def mass_norm(matrix: sp.spmatrix, vector: np.ndarray) -> float:
    """sqrt(vᵀ A v) for a symmetric positive semidefinite ``matrix``."""
    return float(np.sqrt(max(float(vector @ (matrix @ vector)), 0.0)))


def relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    """‖a − b‖ / max(1, ‖b‖) in the Euclidean norm."""
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def format_float(value: float) -> str:
    """Exact ASCII decimal with 17 significant digits."""
    return format(float(value), ".17g")
