"""Dense linear heads, SGD, and EMA parameter tracking.

The detector at desk scale is just two linear heads over precomputed
features: a classifier (no bias) and a 4-way box regressor (with bias).
All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng


@dataclass
class LinearHead:
    """weights: (out_dim, in_dim); bias: (out_dim,). Classifier bias stays zero."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "LinearHead":
        return LinearHead(self.weights.copy(), self.bias.copy())

    @staticmethod
    def init(out_dim: int, in_dim: int, rng: Rng, scale: float = 0.01,
             with_bias: bool = True) -> "LinearHead":
        w = rng.normal(scale=scale, size=(out_dim, in_dim)).astype(np.float64)
        b = np.zeros(out_dim, dtype=np.float64)
        if with_bias:
            b += rng.normal(scale=scale, size=out_dim)
        return LinearHead(w, b)


def linear_forward(head: LinearHead, feature: np.ndarray) -> np.ndarray:
    """out[i] = <weights[i], feature> + bias[i]."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (head.in_dim,):
        raise ValueError(
            f"feature shape {feature.shape} does not match head in_dim ({head.in_dim},)")
    return head.weights @ feature + head.bias


def linear_forward_batch(head: LinearHead, features: np.ndarray) -> np.ndarray:
    """Row-wise forward for a (n, in_dim) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != head.in_dim:
        raise ValueError(
            f"features shape {features.shape} does not match head in_dim ({head.in_dim},)")
    return features @ head.weights.T + head.bias


def sgd_update(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """One plain SGD step: params - lr * grads."""
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradients in sgd_update")
    return params - lr * grads


@dataclass
class EmaState:
    """Teacher-side exponential moving average of student parameters."""

    teacher_params: list = field(default_factory=list)
    momentum: float = 0.999

    def __post_init__(self):
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")


def ema_update(state: EmaState, student_params: list) -> EmaState:
    """teacher' = m * teacher + (1-m) * student, elementwise per tensor."""
    if len(state.teacher_params) != len(student_params):
        raise ValueError("parameter list length mismatch in ema_update")
    m = state.momentum
    new_params = []
    for t, s in zip(state.teacher_params, student_params):
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch in ema_update: {t.shape} vs {s.shape}")
        new_params.append(m * t + (1.0 - m) * s)
    return EmaState(new_params, m)
