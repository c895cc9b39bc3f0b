"""Virtual-category classification loss.

The classifier weight matrix is extended per sample by a "virtual weight":
the teacher's feature for the pseudo-labelled region, normalised and scaled
into the range of the learned weight rows. For a confusing sample the
virtual index becomes the target and all potential categories are ignored
(their logits drop out of the normalising sum entirely). For an unambiguous
sample only the virtual index is ignored, which reduces to plain softmax
cross-entropy on the original logits.

All losses return analytic gradients; the virtual weight is a constant in
backward (no gradient reaches the teacher), but gradient does flow to the
student feature through the virtual logit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .potential import PCSet


@dataclass
class VirtualWeight:
    vector: np.ndarray
    scale: float


@dataclass
class TargetSpec:
    """Classification target: one target index plus a set of ignored indices."""

    target_index: int
    ignore_set: frozenset

    def __post_init__(self):
        self.ignore_set = frozenset(self.ignore_set)
        if self.target_index in self.ignore_set:
            raise ValueError(f"target index {self.target_index} is in the ignore set")


@dataclass
class LossResult:
    value: float
    grad_logits: np.ndarray


@dataclass
class SampleLossResult:
    """Per-sample classification loss with gradients for the trainable tensors."""

    value: float
    grad_logits: np.ndarray   # (K+1,) when extended, (K,) otherwise
    grad_feature: np.ndarray  # (in_dim,)
    grad_weights: np.ndarray  # (K, in_dim); no row for the virtual weight
    confusing: bool


def adaptive_scale(W: np.ndarray) -> float:
    """Mean Euclidean norm of the classifier weight rows."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] == 0:
        raise ValueError(f"expected non-empty 2-d weight matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("non-finite entries in weight matrix")
    return float(np.mean(np.linalg.norm(W, axis=1)))


def build_virtual_weight(teacher_feature: np.ndarray, scale: float) -> VirtualWeight:
    """Normalise the teacher feature and rescale it to the requested norm."""
    f = np.asarray(teacher_feature, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite teacher feature")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    norm = np.linalg.norm(f)
    if norm == 0.0:
        raise ValueError("zero-norm teacher feature: upstream pooling produced no signal")
    return VirtualWeight(vector=(scale / norm) * f, scale=float(scale))


def extend_logits(student_feature: np.ndarray, W: np.ndarray,
                  w_v: VirtualWeight) -> np.ndarray:
    """Logits over the K predefined classes plus the virtual index K (last)."""
    f = np.asarray(student_feature, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if f.shape != (W.shape[1],) or w_v.vector.shape != f.shape:
        raise ValueError(
            f"dimension mismatch: feature {f.shape}, W {W.shape}, w_v {w_v.vector.shape}")
    return np.concatenate([W @ f, [w_v.vector @ f]])


def masked_lse_loss(logits: np.ndarray, target: TargetSpec,
                    focal_gamma: float = 0.0) -> LossResult:
    """Ignore-masked log-sum-exp loss.

    value = w_f * log(sum_{i not ignored} exp(l_i - l_target)), computed with
    a max shift for stability. w_f = (1 - p_target)^gamma with p_target the
    masked softmax probability of the target; gamma = 0 gives w_f = 1 and
    plain cross-entropy. Gradients go through w_f as well, so they match
    finite differences of the full value.
    """
    logits = np.asarray(logits, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(logits))
    if bad.size:
        raise ValueError(f"non-finite logit at index {int(bad[0])}")
    n = logits.size
    t = target.target_index
    if not (0 <= t < n):
        raise ValueError(f"target index {t} out of range for {n} logits")
    keep = np.ones(n, dtype=bool)
    for i in target.ignore_set:
        keep[i] = False

    z = logits[keep] - logits[t]
    m = z.max()
    e = np.exp(z - m)
    s = e.sum()
    lse = m + np.log(s)
    p_keep = e / s
    # position of the target among the kept logits
    t_pos = int(np.sum(keep[:t]))
    p_t = p_keep[t_pos]

    if focal_gamma > 0.0:
        one_minus = max(1.0 - p_t, 0.0)
        w_f = one_minus ** focal_gamma
        # d value / d l_i = (p_i - delta_it) * (w_f + lse * gamma * (1-p_t)^(gamma-1) * p_t)
        coef = w_f + (lse * focal_gamma * one_minus ** (focal_gamma - 1.0) * p_t
                      if one_minus > 0.0 else 0.0)
        value = w_f * lse
    else:
        coef = 1.0
        value = lse

    grad = np.zeros(n, dtype=np.float64)
    grad[keep] = coef * p_keep
    grad[t] = 0.0
    grad[t] = -grad.sum()  # exact zero-sum; equals coef * (p_t - 1)
    return LossResult(value=float(value), grad_logits=grad)


def classification_loss_for_sample(student_feature: np.ndarray, W: np.ndarray,
                                   teacher_feature: np.ndarray, pc_set: PCSet,
                                   pseudo_cls: int, scale_mode: str = "constant",
                                   scale: float = 3.5,
                                   focal_gamma: float = 0.0) -> SampleLossResult:
    """Classification loss of one pseudo-labelled sample.

    Confusing sample (|PC| > 1): target is the virtual index, all PC members
    ignored. Unambiguous sample: target is the pseudo class, only the
    virtual index ignored (identical to CE on the un-extended logits).
    Gradients flow to the student feature and W, never to the teacher.
    """
    if pseudo_cls not in pc_set.members:
        raise ValueError(f"pseudo class {pseudo_cls} not in PC set {pc_set.members}")
    W = np.asarray(W, dtype=np.float64)
    K = W.shape[0]

    if scale_mode == "adaptive":
        sc = adaptive_scale(W)
    elif scale_mode == "constant":
        sc = scale
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")

    w_v = build_virtual_weight(teacher_feature, sc)
    logits = extend_logits(student_feature, W, w_v)
    confusing = len(pc_set.members) > 1
    if confusing:
        target = TargetSpec(K, frozenset(pc_set.members))
    else:
        target = TargetSpec(pseudo_cls, frozenset({K}))

    res = masked_lse_loss(logits, target, focal_gamma)
    g = res.grad_logits
    # w_v is constant in backward: row K of the extended matrix gets no update,
    # but the student feature still receives gradient through the virtual logit.
    grad_feature = W.T @ g[:K] + g[K] * w_v.vector
    grad_weights = np.outer(g[:K], student_feature)
    return SampleLossResult(value=res.value, grad_logits=g, grad_feature=grad_feature,
                            grad_weights=grad_weights, confusing=confusing)


def batch_ce(logits: np.ndarray, targets: Iterable[int],
             focal_gamma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise plain cross-entropy with gradients, vectorised.

    Matches masked_lse_loss with an empty ignore set per row; used on the
    hot path of the training loop where per-sample calls would dominate.
    Returns (values (n,), grad_logits (n, K)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(list(targets), dtype=np.intp)
    n = logits.shape[0]
    rows = np.arange(n)
    z = logits - logits[rows, targets][:, None]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(s[:, 0])
    p = e / s
    p_t = p[rows, targets]

    if focal_gamma > 0.0:
        one_minus = np.maximum(1.0 - p_t, 0.0)
        w_f = one_minus ** focal_gamma
        focal = np.where(one_minus > 0.0,
                         lse * focal_gamma * one_minus ** (focal_gamma - 1.0) * p_t,
                         0.0)
        coef = w_f + focal
        values = w_f * lse
    else:
        coef = np.ones(n)
        values = lse

    grads = coef[:, None] * p
    grads[rows, targets] = 0.0
    grads[rows, targets] = -grads.sum(axis=1)
    return values, grads
