"""Integration tests for the PMU event identifier pipeline."""
