"""Minimal numpy layer library: layers, loss, optimizer and gradient checking."""

from app.neural.grad_check import grad_check, numerical_gradient
from app.neural.layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2x2,
    ReLU,
    SpatialPyramidPooling,
)
from app.neural.losses import softmax, softmax_cross_entropy
from app.neural.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2x2",
    "ReLU",
    "SpatialPyramidPooling",
    "adam_step",
    "grad_check",
    "numerical_gradient",
    "softmax",
    "softmax_cross_entropy",
]
