"""The six candidate activations and their derivatives.

Index order is canonical and shared by selection logits, groups and every
report: relu, sigmoid, tanh, leaky_relu, elu, selu.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ActivationKind(enum.IntEnum):
    RELU = 0
    SIGMOID = 1
    TANH = 2
    LEAKY_RELU = 3
    ELU = 4
    SELU = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "ActivationKind":
        key = name.strip().lower().replace("-", "_")
        if key == "leakyrelu":
            key = "leaky_relu"
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATION_NAMES}") from None


NUM_ACTIVATIONS = len(ActivationKind)
ACTIVATION_NAMES = tuple(k.label for k in ActivationKind)


@dataclass(frozen=True)
class ActivationParams:
    leaky_slope: float = 0.01
    elu_alpha: float = 1.0
    selu_lambda: float = 1.0507009873554805
    selu_alpha: float = 1.6732632423543772

    def __post_init__(self):
        for name in ("leaky_slope", "elu_alpha", "selu_lambda", "selu_alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_PARAMS = ActivationParams()


def _sigmoid(x):
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def apply(kind, x, params: ActivationParams = DEFAULT_PARAMS) -> np.ndarray:
    """Elementwise activation value."""
    kind = ActivationKind(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(x)
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.LEAKY_RELU:
        return np.where(x > 0, x, params.leaky_slope * x)
    neg = np.expm1(np.minimum(x, 0.0))
    if kind is ActivationKind.ELU:
        return np.where(x > 0, x, params.elu_alpha * neg)
    return params.selu_lambda * np.where(x > 0, x, params.selu_alpha * neg)


def derivative(kind, x, params: ActivationParams = DEFAULT_PARAMS) -> np.ndarray:
    """Elementwise first derivative; at a kink the right limit is used."""
    kind = ActivationKind(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return (x >= 0).astype(np.float64)
    if kind is ActivationKind.SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind is ActivationKind.LEAKY_RELU:
        return np.where(x >= 0, 1.0, params.leaky_slope)
    e = np.exp(np.minimum(x, 0.0))
    if kind is ActivationKind.ELU:
        return np.where(x >= 0, 1.0, params.elu_alpha * e)
    return params.selu_lambda * np.where(x >= 0, 1.0, params.selu_alpha * e)


def apply_all(x, params: ActivationParams = DEFAULT_PARAMS) -> np.ndarray:
    """Stack of every candidate applied to ``x``; shape ``(6,) + x.shape``."""
    return np.stack([apply(k, x, params) for k in ActivationKind])
