"""Unit tests for the PMU event identifier."""
