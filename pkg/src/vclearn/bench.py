"""Deterministic synthetic detection benchmark.

Scenes are lists of ground-truth boxes on a small canvas. Each foreground
class has a unit-norm appearance prototype; designated pairs of prototypes
are built with high cosine similarity so that confusable pseudo labels
arise organically once only a few scenes are labelled. A proposal's feature
is an IoU-weighted mix of the matched prototype and Gaussian noise,
concatenated with its (noisy) regression target, so teacher and student
"views" of the same box differ only by independent noise draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, iou_matrix
from .regression import encode_batch
from .rng import Rng

# stream tags for substream derivation
_STREAM_PROTO = 1
_STREAM_SCENE = 2
_STREAM_SPLIT = 3
_STREAM_PROPOSAL = 4


@dataclass
class BenchConfig:
    k_fg: int = 10
    d_a: int = 32
    pairs: list = field(default_factory=lambda: [(0, 1), (2, 3)])
    pair_sim: float = 0.9
    noise_sigma: float = 0.15
    n_scenes: int = 2000
    n_test_scenes: int = 300
    seed: int = 7  # dataset seed, independent of the training seed
    canvas: float = 100.0
    obj_min: int = 1
    obj_max: int = 5
    size_min: float = 10.0
    size_max: float = 40.0
    max_gt_iou: float = 0.25
    n_jitter: int = 8
    n_random: int = 8
    jitter_min_iou: float = 0.3

    @property
    def background_index(self) -> int:
        return self.k_fg

    @property
    def n_classes(self) -> int:
        # foreground classes + background
        return self.k_fg + 1

    @property
    def feature_dim(self) -> int:
        return self.d_a + 4


@dataclass
class ClassPrototypes:
    vectors: np.ndarray  # (k_fg, d_a), unit rows
    pairs: list
    pair_sim: float


@dataclass
class Scene:
    image_id: int
    canvas: tuple
    objects: list  # list of (Box, cls)


def gen_prototypes(k_fg: int, d_a: int, pairs: list, target_sim: float,
                   seed: int) -> ClassPrototypes:
    """Unit-norm class prototypes with engineered confusable pairs.

    Pair members are constructed at exactly the target cosine; the whole set
    is resampled until every non-pair cosine is below 0.3, so the engineered
    pairs are the only confusable classes.
    """
    if k_fg < 2 or d_a < 8:
        raise ValueError(f"need k_fg >= 2 and d_a >= 8, got {k_fg}, {d_a}")
    pairs = [tuple(p) for p in pairs]
    paired = [i for p in pairs for i in p]
    if len(set(paired)) != len(paired) or any(not 0 <= i < k_fg for i in paired):
        raise ValueError(f"invalid confusable pairs {pairs} for {k_fg} classes")
    if 2 * len(pairs) > k_fg:
        raise ValueError(f"too many pairs ({len(pairs)}) for {k_fg} classes")

    rng = Rng(seed, _STREAM_PROTO)
    pair_partner = {a: b for a, b in pairs}
    for _ in range(1000):
        vecs = rng.normal(size=(k_fg, d_a))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        for a, b in pairs:
            # orthonormalise b against a, then rotate to the target cosine
            w = vecs[b] - (vecs[b] @ vecs[a]) * vecs[a]
            w /= np.linalg.norm(w)
            vecs[b] = target_sim * vecs[a] + np.sqrt(1.0 - target_sim ** 2) * w
        cos = vecs @ vecs.T
        ok = True
        for i in range(k_fg):
            for j in range(i + 1, k_fg):
                if pair_partner.get(i) == j:
                    continue
                if abs(cos[i, j]) >= 0.3:
                    ok = False
        if ok:
            return ClassPrototypes(vectors=vecs, pairs=pairs, pair_sim=target_sim)
    raise RuntimeError("could not satisfy prototype similarity constraints "
                       f"(k_fg={k_fg}, d_a={d_a}, pairs={pairs})")


def gen_scene(cfg: BenchConfig, image_id: int, seed: int) -> Scene:
    """One synthetic scene: 1..5 boxes with IoU-separated placements."""
    rng = Rng(seed, _STREAM_SCENE, image_id)
    n_obj = int(rng.integers(cfg.obj_min, cfg.obj_max + 1))
    objects = []
    placed = []
    for _ in range(n_obj):
        for _attempt in range(100):
            w = float(rng.uniform(cfg.size_min, cfg.size_max))
            h = float(rng.uniform(cfg.size_min, cfg.size_max))
            x1 = float(rng.uniform(0.0, cfg.canvas - w))
            y1 = float(rng.uniform(0.0, cfg.canvas - h))
            box = Box(x1, y1, x1 + w, y1 + h)
            if placed:
                overlaps = iou_matrix(box.as_array(), np.array(placed))
                if overlaps.max() > cfg.max_gt_iou:
                    continue
            cls = int(rng.integers(0, cfg.k_fg))
            objects.append((box, cls))
            placed.append(box.as_array())
            break
    if not objects:
        raise RuntimeError(f"failed to place any object in scene {image_id}")
    return Scene(image_id=image_id, canvas=(cfg.canvas, cfg.canvas), objects=objects)


def scene_features(scene: Scene, boxes: np.ndarray, protos: ClassPrototypes,
                   noise_sigma: float, rng: Rng) -> np.ndarray:
    """Features of a (P,4) box array against a scene, one (P, d_a+4) matrix.

    A box with max-IoU v >= 0.3 to some GT object mixes that object's
    prototype at weight v with Gaussian noise at weight (1-v), and carries
    its noisy regression target to the matched box; anything else is pure
    noise. Independent calls (teacher vs student view) use independent
    rng streams.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    d_a = protos.vectors.shape[1]
    gt = np.array([b.as_array() for b, _ in scene.objects])
    gt_cls = np.array([c for _, c in scene.objects])
    overlaps = iou_matrix(boxes, gt)
    match = overlaps.argmax(axis=1)
    v = overlaps[np.arange(n), match]

    eta = rng.normal(scale=noise_sigma, size=(n, d_a)) if noise_sigma > 0 else np.zeros((n, d_a))
    eps = rng.normal(scale=noise_sigma, size=(n, 4)) if noise_sigma > 0 else np.zeros((n, 4))

    feats = np.empty((n, d_a + 4), dtype=np.float64)
    matched = v >= 0.3
    feats[:, :d_a] = eta
    feats[:, d_a:] = eps
    if matched.any():
        vm = v[matched][:, None]
        feats[matched, :d_a] = (vm * protos.vectors[gt_cls[match[matched]]]
                                + (1.0 - vm) * eta[matched])
        feats[matched, d_a:] += encode_batch(boxes[matched], gt[match[matched]])
    return feats


def proposal_feature(scene: Scene, box: Box, protos: ClassPrototypes,
                     noise_sigma: float, rng: Rng) -> np.ndarray:
    """Feature vector of a single box (see scene_features)."""
    return scene_features(scene, box.as_array()[None, :], protos, noise_sigma, rng)[0]


def _box_from_array(a: np.ndarray) -> Box:
    return Box(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def gen_proposal_boxes(scene: Scene, cfg: BenchConfig, seed: int,
                       visit: int = 0) -> np.ndarray:
    """Candidate boxes for a scene: per-object jitters plus uniform randoms.

    Stands in for a region proposal network. Deterministic per (seed, scene,
    visit); training passes an increasing visit count so each pass over a
    scene sees fresh jitter, the way an RPN's proposals drift over epochs.
    """
    rng = Rng(seed, _STREAM_PROPOSAL, scene.image_id, visit)
    g = np.array([b.as_array() for b, _ in scene.objects])
    n_obj = len(scene.objects)
    nj = cfg.n_jitter
    # all jitter slots of every object are drawn and tested in one batch;
    # failed slots are redrawn together, falling back to GT after 50 rounds
    out = np.repeat(g, nj, axis=0)
    obj_of = np.repeat(np.arange(n_obj), nj)
    open_slots = np.arange(n_obj * nj)
    for _attempt in range(50):
        k = len(open_slots)
        if k == 0:
            break
        go = g[obj_of[open_slots]]
        gw = go[:, 2] - go[:, 0]
        gh = go[:, 3] - go[:, 1]
        dx = rng.uniform(-0.3, 0.3, size=k) * gw
        dy = rng.uniform(-0.3, 0.3, size=k) * gh
        w = gw * np.exp(rng.uniform(-0.25, 0.25, size=k))
        h = gh * np.exp(rng.uniform(-0.25, 0.25, size=k))
        cx = (go[:, 0] + go[:, 2]) / 2.0 + dx
        cy = (go[:, 1] + go[:, 3]) / 2.0 + dy
        cand = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
        cand[:, :2] = np.maximum(cand[:, :2], 0.0)
        cand[:, 2:] = np.minimum(cand[:, 2:], cfg.canvas)
        ix = np.clip(np.minimum(cand[:, 2], go[:, 2]) - np.maximum(cand[:, 0], go[:, 0]), 0, None)
        iy = np.clip(np.minimum(cand[:, 3], go[:, 3]) - np.maximum(cand[:, 1], go[:, 1]), 0, None)
        inter = ix * iy
        areas = (cand[:, 2] - cand[:, 0]) * (cand[:, 3] - cand[:, 1])
        v = inter / (areas + gw * gh - inter)
        ok = ((cand[:, 2] - cand[:, 0] >= 1.0) & (cand[:, 3] - cand[:, 1] >= 1.0)
              & (v >= cfg.jitter_min_iou))
        out[open_slots[ok]] = cand[ok]
        open_slots = open_slots[~ok]
    w = rng.uniform(cfg.size_min, cfg.size_max, size=cfg.n_random)
    h = rng.uniform(cfg.size_min, cfg.size_max, size=cfg.n_random)
    x1 = rng.uniform(0.0, 1.0, size=cfg.n_random) * (cfg.canvas - w)
    y1 = rng.uniform(0.0, 1.0, size=cfg.n_random) * (cfg.canvas - h)
    return np.concatenate([out, np.stack([x1, y1, x1 + w, y1 + h], axis=1)], axis=0)


def make_split(n_scenes: int, label_ratio: float, seed: int) -> tuple[list, list]:
    """Deterministic labelled/unlabelled partition of scene ids."""
    if n_scenes <= 0:
        raise ValueError("n_scenes must be positive")
    if not (0.0 < label_ratio < 1.0):
        raise ValueError(f"label_ratio must be in (0,1), got {label_ratio}")
    n_lab = max(1, round(label_ratio * n_scenes))
    perm = Rng(seed, _STREAM_SPLIT).permutation(n_scenes)
    labelled = sorted(int(i) for i in perm[:n_lab])
    unlabelled = sorted(int(i) for i in perm[n_lab:])
    return labelled, unlabelled


def gen_dataset(cfg: BenchConfig) -> list[Scene]:
    """Train scenes [0, n_scenes) followed by test scenes [n_scenes, +n_test)."""
    total = cfg.n_scenes + cfg.n_test_scenes
    return [gen_scene(cfg, i, cfg.seed) for i in range(total)]


def save_scenes(scenes: list[Scene], path: str) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            rec = {
                "image_id": s.image_id,
                "canvas": list(s.canvas),
                "objects": [{"box": list(b.as_array()), "cls": int(c)}
                            for b, c in s.objects],
            }
            fh.write(json.dumps(rec) + "\n")


def load_scenes(path: str) -> list[Scene]:
    scenes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            objects = [(_box_from_array(np.array(o["box"])), int(o["cls"]))
                       for o in rec["objects"]]
            scenes.append(Scene(image_id=int(rec["image_id"]),
                                canvas=tuple(rec["canvas"]), objects=objects))
    return scenes
