"""Command-line pipeline for the PMU event identifier."""

from app.pipelines.cli import main

__all__ = ["main"]
