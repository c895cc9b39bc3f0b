"""Box geometry, NMS, score filtering, and proposal-target assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKGROUND = -1  # assignment marker, not a class index


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(coords)):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class PseudoLabel:
    box: Box
    cls: int
    score: float


@dataclass
class Assignment:
    proposal_index: int
    label_index: int  # BACKGROUND if not foreground
    max_iou: float
    foreground: bool
    background: bool  # max IoU below bg_thr; neither flag set means discarded


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n,4) and (m,4) corner-format box arrays."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix = (np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
          - np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0]))
    iy = (np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
          - np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1]))
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def nms(detections: list[tuple[Box, int, float]], iou_thr: float) -> list[tuple[Box, int, float]]:
    """Greedy class-wise non-maximum suppression, highest score first.

    Ties in score are broken by input order, so the result is deterministic.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i][2], i))
    kept: list[int] = []
    for i in order:
        box_i, cls_i, _ = detections[i]
        ok = True
        for j in kept:
            box_j, cls_j, _ = detections[j]
            if cls_i == cls_j and iou(box_i, box_j) > iou_thr:
                ok = False
                break
        if ok:
            kept.append(i)
    kept.sort()
    return [detections[i] for i in kept]


def nms_indices(boxes: np.ndarray, classes: np.ndarray, scores: np.ndarray,
                iou_thr: float) -> np.ndarray:
    """Array fast path of :func:`nms`: indices kept, in input order.

    Same greedy class-wise rule and the same order tie-break; the training
    and evaluation loops use this to avoid per-box object overhead.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.intp)
    order = np.lexsort((np.arange(n), -np.asarray(scores, dtype=np.float64)))
    classes = np.asarray(classes)
    suppress = (iou_matrix(boxes, boxes) > iou_thr) & (classes[:, None] == classes[None, :])
    kept: list[int] = []
    dead = np.zeros(n, dtype=bool)
    for i in order:
        if not dead[i]:
            kept.append(int(i))
            dead |= suppress[i]
    kept.sort()
    return np.array(kept, dtype=np.intp)


def filter_by_score(detections: list[tuple[Box, int, float]], thr: float) -> list[PseudoLabel]:
    """Keep detections with score >= thr (inclusive), preserving order."""
    if not (0.0 <= thr <= 1.0):
        raise ValueError(f"threshold must be in [0,1], got {thr}")
    return [PseudoLabel(box=b, cls=c, score=s) for b, c, s in detections if s >= thr]


def assign_proposals(proposals: list[Box], labels: list[PseudoLabel],
                     fg_thr: float, bg_thr: float) -> list[Assignment]:
    """Match each proposal to its max-IoU label (ties to the lowest label index).

    max IoU >= fg_thr: foreground; < bg_thr: background; in between: discarded
    (label_index BACKGROUND, foreground False, but kept in the output so the
    caller can see the band).
    """
    if fg_thr < bg_thr:
        raise ValueError(f"fg_thr {fg_thr} < bg_thr {bg_thr}")
    out = []
    for pi, p in enumerate(proposals):
        best_j, best_v = BACKGROUND, 0.0
        for j, lab in enumerate(labels):
            v = iou(p, lab.box)
            if v > best_v:
                best_j, best_v = j, v
        fg = best_v >= fg_thr
        out.append(Assignment(proposal_index=pi,
                              label_index=best_j if fg else BACKGROUND,
                              max_iou=best_v, foreground=fg,
                              background=best_v < bg_thr))
    return out


@dataclass
class LabelStore:
    """Per-image store of the pseudo labels from the previous visit."""

    last: dict = field(default_factory=dict)
    visits: int = 0

    def record_and_fetch_last(self, image_id, current: list[PseudoLabel]) -> list[PseudoLabel]:
        """Return the previously stored list (empty on first visit), then replace it."""
        previous = self.last.get(image_id, [])
        self.last[image_id] = list(current)
        self.visits += 1
        return previous


def record_and_fetch_last(store: LabelStore, image_id, current: list[PseudoLabel]) -> list[PseudoLabel]:
    return store.record_and_fetch_last(image_id, current)
