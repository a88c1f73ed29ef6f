"""Pydantic models and schemas."""

