"""
Tests for utility functions.

Tests validation helpers, seed resolution and the ordered worker map.
"""

import threading
import time

import numpy as np
import pytest
import scipy.sparse as sp

from hydrosplit.exceptions import ValidationError
from hydrosplit.utils import (
    SEED_ENV_VAR,
    chunk_ranges,
    default_rng,
    format_float,
    mass_norm,
    ordered_map,
    relative_gap,
    resolve_seed,
    validate_count,
    validate_positive,
)


class TestValidatePositive:
    """Test positive scalar validation."""

    def test_accepts_int_and_float(self):
        """Test integers and floats are returned as floats."""
        assert validate_positive(2, "x") == 2.0
        assert validate_positive(0.25, "x") == 0.25

    @pytest.mark.parametrize("value", [0, -1.0, float("inf"), float("nan")])
    def test_rejects_non_positive(self, value):
        """Test zero, negatives and non-finite values are rejected."""
        with pytest.raises(ValidationError) as exc_info:
            validate_positive(value, "target_h")
        assert "target_h" in str(exc_info.value)

    def test_rejects_bool_and_strings(self):
        """Test non-numeric types are rejected."""
        with pytest.raises(ValidationError):
            validate_positive(True, "x")
        with pytest.raises(ValidationError) as exc_info:
            validate_positive("1", "x")
        assert "must be a number" in str(exc_info.value)


class TestValidateCount:
    """Test integer count validation."""

    def test_minimum(self):
        """Test the lower bound is enforced."""
        assert validate_count(1, "layers", 1) == 1
        with pytest.raises(ValidationError) as exc_info:
            validate_count(0, "layers", 1)
        assert ">= 1" in str(exc_info.value)

    def test_rejects_float(self):
        """Test floats are not counts."""
        with pytest.raises(ValidationError):
            validate_count(2.0, "layers")


class TestResolveSeed:
    """Test seed resolution order."""

    def test_explicit_wins(self, monkeypatch):
        """Test an explicit seed overrides the environment."""
        monkeypatch.setenv(SEED_ENV_VAR, "11")
        assert resolve_seed(5) == 5

    def test_environment(self, monkeypatch):
        """Test the environment variable is used when no seed is given."""
        monkeypatch.setenv(SEED_ENV_VAR, "11")
        assert resolve_seed() == 11

    def test_default_zero(self, monkeypatch):
        """Test the default seed is 0."""
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        assert resolve_seed() == 0

    def test_bad_environment(self, monkeypatch):
        """Test a non-integer environment value is a validation error."""
        monkeypatch.setenv(SEED_ENV_VAR, "abc")
        with pytest.raises(ValidationError) as exc_info:
            resolve_seed()
        assert SEED_ENV_VAR in str(exc_info.value)

    def test_default_rng_reproducible(self, monkeypatch):
        """Test generators from the same seed agree."""
        monkeypatch.setenv(SEED_ENV_VAR, "3")
        a = default_rng().standard_normal(4)
        b = default_rng(3).standard_normal(4)
        np.testing.assert_array_equal(a, b)


class TestChunking:
    """Test chunk ranges and the ordered map."""

    def test_chunk_ranges_cover(self):
        """Test chunks tile the index range."""
        assert list(chunk_ranges(5, 2)) == [(0, 2), (2, 4), (4, 5)]
        assert list(chunk_ranges(0, 2)) == []

    def test_ordered_map_keeps_order(self):
        """Test results come back in input order with several workers."""

        def slow(i):
            time.sleep(0.01 * (5 - i))
            return i * i

        assert ordered_map(slow, list(range(5)), workers=4) == [0, 1, 4, 9, 16]

    def test_ordered_map_uses_threads(self):
        """Test more than one thread runs with workers > 1."""
        seen = set()

        def record(_):
            seen.add(threading.get_ident())
            time.sleep(0.02)

        ordered_map(record, list(range(8)), workers=4)
        assert len(seen) > 1


class TestNumerics:
    """Test shared numeric helpers."""

    def test_mass_norm(self):
        """Test sqrt(vᵀAv) for a diagonal matrix."""
        A = sp.diags([1.0, 4.0])
        assert mass_norm(A, np.array([3.0, 2.0])) == pytest.approx(5.0)

    def test_relative_gap(self):
        """Test the gap is absolute below unit norm."""
        assert relative_gap(np.array([0.1]), np.array([0.0])) == pytest.approx(0.1)
        assert relative_gap(np.array([11.0]), np.array([10.0])) == pytest.approx(0.1)

    def test_format_float_round_trips(self):
        """Test 17 significant digits read back exactly."""
        value = 0.1 + 0.2
        assert float(format_float(value)) == value
