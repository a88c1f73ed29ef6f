"""Storage and repository layer."""

