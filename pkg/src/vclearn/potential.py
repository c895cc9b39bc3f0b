"""Potential-category discovery and boundary quality flags.

A pseudo label is "confusing" when its class cannot be settled: either it
flipped since the last visit to the same image (temporal check) or an
independently trained detector disagrees (cross-model check). Either way
the outcome is a small potential-category set, at most two members, which
may include the background index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .boxes import Box, PseudoLabel, iou


@dataclass(frozen=True)
class PCSet:
    """Ordered set of plausible classes for one sample; 1 or 2 members."""

    members: tuple
    primary_cls: int

    def __post_init__(self):
        if self.primary_cls not in self.members:
            raise ValueError(f"primary class {self.primary_cls} not in {self.members}")
        if not (1 <= len(self.members) <= 2):
            raise ValueError(f"PC set must have 1 or 2 members, got {self.members}")
        if len(self.members) == 2 and self.members[0] == self.members[1]:
            raise ValueError(f"duplicate members in PC set {self.members}")

    @property
    def confusing(self) -> bool:
        return len(self.members) > 1


@dataclass(frozen=True)
class QualityFlags:
    q_hor: int
    q_ver: int

    def __post_init__(self):
        if self.q_hor not in (0, 1) or self.q_ver not in (0, 1):
            raise ValueError(f"flags must be 0/1, got ({self.q_hor}, {self.q_ver})")


def temporal_pc(b: PseudoLabel, union_set: list[PseudoLabel], background_index: int,
                iou_close_thr: float = 0.5) -> tuple[PCSet, Optional[PseudoLabel]]:
    """Temporal-stability check of one pseudo label against current + last labels.

    union_set is the union of current and previous-visit labels, excluding b
    itself. The comparator is the max-IoU member with IoU >= iou_close_thr
    (tie broken by lowest index). Same class: unambiguous. Different class:
    PC = {cls_b, cls_comparator}. No comparator: the confusing alternative
    is background.
    """
    if not (0.0 < iou_close_thr < 1.0):
        raise ValueError(f"iou_close_thr must be in (0,1), got {iou_close_thr}")
    best, best_v = None, 0.0
    for cand in union_set:
        v = iou(b.box, cand.box)
        if v >= iou_close_thr and v > best_v:
            best, best_v = cand, v
    if best is None:
        return PCSet((b.cls, background_index), b.cls), None
    if best.cls == b.cls:
        return PCSet((b.cls,), b.cls), best
    return PCSet((b.cls, best.cls), b.cls), best


def cross_model_pc(b1: PseudoLabel, other_argmax: Callable[[Box], int]) -> PCSet:
    """Cross-model check: re-classify the region of b1 with the other detector.

    other_argmax maps a box to the other detector's argmax class for that
    region (background index allowed). Agreement gives a singleton set.
    """
    cls2 = int(other_argmax(b1.box))
    if cls2 == b1.cls:
        return PCSet((b1.cls,), b1.cls)
    return PCSet((b1.cls, cls2), b1.cls)


def quality_flags(b: Box, b_hat: Optional[Box], t_loc: float = 0.05) -> QualityFlags:
    """Decoupled horizontal/vertical boundary quality of b against comparator b_hat.

    A direction is high quality when both of its boundary shifts, normalised
    by b's own size in that direction, are below t_loc in magnitude. No
    comparator means both flags 0.
    """
    if t_loc <= 0:
        raise ValueError(f"t_loc must be positive, got {t_loc}")
    if b_hat is None:
        return QualityFlags(0, 0)
    w, h = b.width, b.height
    q_hor = int(abs(b.x1 - b_hat.x1) / w < t_loc and abs(b.x2 - b_hat.x2) / w < t_loc)
    q_ver = int(abs(b.y1 - b_hat.y1) / h < t_loc and abs(b.y2 - b_hat.y2) / h < t_loc)
    return QualityFlags(q_hor, q_ver)
