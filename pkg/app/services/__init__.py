"""Business logic services."""

