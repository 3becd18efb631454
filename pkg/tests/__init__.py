"""Test package for hydrosplit."""
