"""Test suite for the PMU event identifier."""
