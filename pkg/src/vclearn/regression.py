"""Box-delta encoding, Smooth-L1, and the quality-gated localisation loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box
from .potential import QualityFlags


@dataclass(frozen=True)
class BoxDeltas:
    """Standard two-stage regression targets: (tx, ty, tw, th)."""

    tx: float
    ty: float
    tw: float
    th: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th], dtype=np.float64)


def encode_deltas(proposal: Box, target: Box) -> BoxDeltas:
    """Centre offsets normalised by proposal size; log size ratios."""
    wp, hp = proposal.width, proposal.height
    tx = ((target.x1 + target.x2) - (proposal.x1 + proposal.x2)) / 2.0 / wp
    ty = ((target.y1 + target.y2) - (proposal.y1 + proposal.y2)) / 2.0 / hp
    tw = np.log(target.width / wp)
    th = np.log(target.height / hp)
    return BoxDeltas(float(tx), float(ty), float(tw), float(th))


def decode_deltas(deltas: BoxDeltas, proposal: Box) -> Box:
    """Inverse of encode_deltas."""
    wp, hp = proposal.width, proposal.height
    cx = (proposal.x1 + proposal.x2) / 2.0 + deltas.tx * wp
    cy = (proposal.y1 + proposal.y2) / 2.0 + deltas.ty * hp
    w = wp * np.exp(deltas.tw)
    h = hp * np.exp(deltas.th)
    return Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def smooth_l1(x: float, beta: float = 1.0) -> float:
    """Quadratic for |x| < beta, linear beyond; continuous at the knee."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    ax = abs(x)
    if ax < beta:
        return 0.5 * x * x / beta
    return ax - 0.5 * beta


def smooth_l1_grad(x: float, beta: float = 1.0) -> float:
    if abs(x) < beta:
        return x / beta
    return float(np.sign(x))


def reg_star_loss(pred: BoxDeltas, target: BoxDeltas, flags: QualityFlags,
                  beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Localisation loss with decoupled gating.

    The x and w terms are gated by the horizontal flag, y and h by the
    vertical flag; gated-off components contribute exactly zero value and
    gradient. Returns (value, grad wrt pred as (4,)).
    """
    d = pred.as_array() - target.as_array()
    gate = np.array([flags.q_hor, flags.q_ver, flags.q_hor, flags.q_ver], dtype=np.float64)
    value = 0.0
    grad = np.zeros(4, dtype=np.float64)
    for i in range(4):
        if gate[i]:
            value += smooth_l1(d[i], beta)
            grad[i] = smooth_l1_grad(d[i], beta)
    return value, grad


def encode_batch(proposals: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorised encode_deltas for (n,4) corner-format box arrays."""
    wp = proposals[:, 2] - proposals[:, 0]
    hp = proposals[:, 3] - proposals[:, 1]
    tx = ((targets[:, 0] + targets[:, 2]) - (proposals[:, 0] + proposals[:, 2])) / 2.0 / wp
    ty = ((targets[:, 1] + targets[:, 3]) - (proposals[:, 1] + proposals[:, 3])) / 2.0 / hp
    tw = np.log((targets[:, 2] - targets[:, 0]) / wp)
    th = np.log((targets[:, 3] - targets[:, 1]) / hp)
    return np.stack([tx, ty, tw, th], axis=1)


def decode_batch(proposals: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Vectorised inverse of encode_deltas; log-size deltas clipped to +-4."""
    w = proposals[:, 2] - proposals[:, 0]
    h = proposals[:, 3] - proposals[:, 1]
    cx = (proposals[:, 0] + proposals[:, 2]) / 2.0 + deltas[:, 0] * w
    cy = (proposals[:, 1] + proposals[:, 3]) / 2.0 + deltas[:, 1] * h
    ow = w * np.exp(np.clip(deltas[:, 2], -4.0, 4.0))
    oh = h * np.exp(np.clip(deltas[:, 3], -4.0, 4.0))
    return np.stack([cx - ow / 2, cy - oh / 2, cx + ow / 2, cy + oh / 2], axis=1)


def smooth_l1_batch(diff: np.ndarray, beta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise Smooth-L1 value and gradient for an array of differences."""
    ax = np.abs(diff)
    quad = ax < beta
    value = np.where(quad, 0.5 * diff * diff / beta, ax - 0.5 * beta)
    grad = np.where(quad, diff / beta, np.sign(diff))
    return value, grad
