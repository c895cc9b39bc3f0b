"""Training loop, AP evaluation, strategy comparison, and gradient checks.

The detector is a pair of linear heads over the synthetic benchmark's
precomputed features. A student copy is trained by SGD; an EMA teacher
generates pseudo labels. After a labelled-only warmup, every step combines
one labelled scene with a handful of unlabelled scenes whose pseudo labels
are routed through one of four strategies for confusing samples: baseline
(use the pseudo class as-is), discard, keep (one CE term per potential
class), or vc (virtual-category loss).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bench import (BenchConfig, ClassPrototypes, Scene, gen_prototypes,
                    gen_proposal_boxes, make_split, scene_features)
from .boxes import Box, LabelStore, PseudoLabel, iou_matrix, nms_indices
from .config import ExperimentConfig
from .linear import EmaState, LinearHead, ema_update, linear_forward, sgd_update
from .losses import (batch_ce, classification_loss_for_sample,
                     masked_lse_loss, TargetSpec)
from .potential import PCSet, QualityFlags, cross_model_pc, quality_flags, temporal_pc
from .regression import (BoxDeltas, decode_batch, encode_batch, reg_star_loss,
                         smooth_l1_batch)
from .rng import Rng

# rng stream tags (bench.py uses 1..4)
_STREAM_INIT = 10
_STREAM_LABELLED = 11
_STREAM_UNLABELLED = 12
_STREAM_EVAL = 13


@dataclass
class Detector:
    cls: LinearHead  # (n_classes, feat_dim), bias fixed at zero
    reg: LinearHead  # (4, feat_dim), with bias

    @staticmethod
    def init(n_classes: int, feat_dim: int, rng: Rng) -> "Detector":
        return Detector(cls=LinearHead.init(n_classes, feat_dim, rng, with_bias=False),
                        reg=LinearHead.init(4, feat_dim, rng, with_bias=True))

    def copy(self) -> "Detector":
        return Detector(self.cls.copy(), self.reg.copy())

    def params(self) -> list:
        return [self.cls.weights, self.reg.weights, self.reg.bias]

    def set_params(self, params: list) -> None:
        self.cls.weights = params[0]
        self.reg.weights = params[1]
        self.reg.bias = params[2]


@dataclass
class RunResult:
    strategy: str
    seed: int
    final_ap: float
    trajectory: list  # (iteration, ap)
    counts: dict
    wall_clock: float
    config: dict
    teacher: "Detector | None" = field(default=None, repr=False)
    student: "Detector | None" = field(default=None, repr=False)

    def record(self) -> dict:
        """Deterministic run record; wall-clock deliberately excluded."""
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "final_ap": self.final_ap,
            "trajectory": [[int(i), float(a)] for i, a in self.trajectory],
            "counts": {k: int(v) for k, v in sorted(self.counts.items())},
            "config": self.config,
        }


# ---------------------------------------------------------------------------
# detection and evaluation


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _detect(det: Detector, feats: np.ndarray, proposals: np.ndarray,
            bg_index: int, nms_thr: float,
            score_temp: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Argmax detections with decoded boxes, after class-wise NMS.

    score_temp < 1 sharpens the softmax used for confidence scores,
    mimicking the overconfidence of deep detectors; it does not affect the
    argmax. Returns (boxes (m,4), classes (m,), scores (m,)).
    """
    logits = feats @ det.cls.weights.T
    probs = _softmax_rows(logits / score_temp)
    cls = probs.argmax(axis=1)
    fg = cls != bg_index
    if not fg.any():
        return np.empty((0, 4)), np.empty(0, dtype=np.intp), np.empty(0)
    deltas = feats[fg] @ det.reg.weights.T + det.reg.bias
    boxes = decode_batch(proposals[fg], deltas)
    classes = cls[fg]
    scores = probs[fg, cls[fg]]
    keep = nms_indices(boxes, classes, scores, nms_thr)
    return boxes[keep], classes[keep], scores[keep]


def _ap_101(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated average precision."""
    pts = np.linspace(0.0, 1.0, 101)
    ap = 0.0
    for t in pts:
        mask = recall >= t
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 101.0


def compute_ap(detections: list, gts: dict, n_fg_classes: int, iou_thr: float) -> float:
    """AP at one IoU threshold, 101-point interpolation, averaged over classes.

    detections: (scene_id, cls, score, box4) tuples. gts: scene_id ->
    (boxes (g,4), classes (g,)). Classes absent from the ground truth are
    skipped. Returns AP in [0, 100].
    """
    if not gts:
        raise ValueError("empty ground-truth set")
    aps = []
    for c in range(n_fg_classes):
        n_gt = sum(int((gcls == c).sum()) for _, (gbox, gcls) in gts.items())
        if n_gt == 0:
            continue
        dets = [(d[0], d[2], d[3]) for d in detections if d[1] == c]
        if not dets:
            aps.append(0.0)
            continue
        order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
        matched = {sid: np.zeros(int((gcls == c).sum()), dtype=bool)
                   for sid, (gbox, gcls) in gts.items()}
        tp = np.zeros(len(order))
        for rank, i in enumerate(order):
            sid, _score, box = dets[i]
            gbox, gcls = gts[sid]
            idx = np.flatnonzero(gcls == c)
            if idx.size == 0:
                continue
            overlaps = iou_matrix(np.asarray(box), gbox[idx])[0]
            best = int(overlaps.argmax())
            if overlaps[best] >= iou_thr and not matched[sid][best]:
                matched[sid][best] = True
                tp[rank] = 1.0
        cum_tp = np.cumsum(tp)
        recall = cum_tp / n_gt
        precision = cum_tp / np.arange(1, len(order) + 1)
        aps.append(_ap_101(recall, precision))
    if not aps:
        raise ValueError("no ground-truth objects in any class")
    return 100.0 * float(np.mean(aps))


@dataclass
class _EvalCache:
    scene_ids: list
    proposals: list   # (P,4) per scene
    feats: list       # (P,d) per scene
    gts: dict         # scene_id -> (boxes, classes)


def build_eval_cache(test_scenes: list[Scene], bench: BenchConfig,
                     protos: ClassPrototypes) -> _EvalCache:
    """Precompute proposals and deterministic features for the test scenes."""
    ids, props, feats, gts = [], [], [], {}
    for scene in test_scenes:
        boxes = gen_proposal_boxes(scene, bench, bench.seed)
        rng = Rng(bench.seed, _STREAM_EVAL, scene.image_id)
        f = scene_features(scene, boxes, protos, bench.noise_sigma, rng)
        ids.append(scene.image_id)
        props.append(boxes)
        feats.append(f)
        gts[scene.image_id] = (np.array([b.as_array() for b, _ in scene.objects]),
                               np.array([c for _, c in scene.objects]))
    return _EvalCache(ids, props, feats, gts)


def evaluate_ap(det: Detector, test_scenes: list[Scene], bench: BenchConfig,
                iou_thr: float = 0.5, nms_thr: float = 0.5,
                score_temp: float = 1.0,
                protos: ClassPrototypes | None = None,
                cache: _EvalCache | None = None) -> float:
    """AP@iou_thr of a detector on the held-out test scenes."""
    if not test_scenes and cache is None:
        raise ValueError("empty test set")
    if cache is None:
        if protos is None:
            protos = gen_prototypes(bench.k_fg, bench.d_a, bench.pairs,
                                    bench.pair_sim, bench.seed)
        cache = build_eval_cache(test_scenes, bench, protos)
    detections = []
    for sid, boxes, feats in zip(cache.scene_ids, cache.proposals, cache.feats):
        dboxes, dcls, dscores = _detect(det, feats, boxes, bench.background_index,
                                        nms_thr, score_temp)
        for i in range(len(dcls)):
            detections.append((sid, int(dcls[i]), float(dscores[i]), dboxes[i]))
    return compute_ap(detections, cache.gts, bench.k_fg, iou_thr)


# ---------------------------------------------------------------------------
# training


@dataclass
class _PairState:
    student: Detector
    teacher: Detector
    ema: EmaState
    store: LabelStore
    rng_lab: Rng
    rng_unlab: Rng
    counts: dict = field(default_factory=lambda: {
        "pseudo_labels": 0, "confusing_labels": 0, "confusing_fg_proposals": 0,
        "unlabelled_accesses": 0,
    })
    visits: dict = field(default_factory=dict)  # image_id -> visit count

    def next_visit(self, image_id: int) -> int:
        v = self.visits.get(image_id, 0)
        self.visits[image_id] = v + 1
        return v


def _init_pair(cfg: ExperimentConfig, pair_idx: int) -> _PairState:
    bench = cfg.bench
    rng_init = Rng(cfg.seed, _STREAM_INIT, pair_idx)
    student = Detector.init(bench.n_classes, bench.feature_dim, rng_init)
    teacher = student.copy()
    ema = EmaState([p.copy() for p in student.params()], cfg.ema_momentum)
    return _PairState(student=student, teacher=teacher, ema=ema, store=LabelStore(),
                      rng_lab=Rng(cfg.seed, _STREAM_LABELLED, pair_idx),
                      rng_unlab=Rng(cfg.seed, _STREAM_UNLABELLED, pair_idx))


@dataclass
class _LabelledTargets:
    targets: np.ndarray   # (P,) class per proposal, background where unmatched
    fg: np.ndarray        # (P,) bool
    deltas: np.ndarray    # (n_fg, 4) regression targets


def _labelled_targets(scene: Scene, boxes: np.ndarray,
                      cfg: ExperimentConfig) -> _LabelledTargets:
    bench = cfg.bench
    gt = np.array([b.as_array() for b, _ in scene.objects])
    gt_cls = np.array([c for _, c in scene.objects])
    overlaps = iou_matrix(boxes, gt)
    match = overlaps.argmax(axis=1)
    v = overlaps[np.arange(len(boxes)), match]
    fg = v >= cfg.fg_thr
    targets = np.full(len(boxes), bench.background_index, dtype=np.intp)
    targets[fg] = gt_cls[match[fg]]
    deltas = encode_batch(boxes[fg], gt[match[fg]]) if fg.any() else np.empty((0, 4))
    return _LabelledTargets(targets=targets, fg=fg, deltas=deltas)


@dataclass
class _Grads:
    cls_w: np.ndarray
    reg_w: np.ndarray
    reg_b: np.ndarray

    @staticmethod
    def zeros(det: Detector) -> "_Grads":
        return _Grads(np.zeros_like(det.cls.weights), np.zeros_like(det.reg.weights),
                      np.zeros_like(det.reg.bias))

    def add(self, other: "_Grads", weight: float = 1.0) -> None:
        self.cls_w += weight * other.cls_w
        self.reg_w += weight * other.reg_w
        self.reg_b += weight * other.reg_b


def _labelled_loss(state: _PairState, scene: Scene, boxes: np.ndarray,
                   lt: _LabelledTargets, protos: ClassPrototypes,
                   cfg: ExperimentConfig) -> tuple[float, _Grads]:
    bench = cfg.bench
    feats = scene_features(scene, boxes, protos, bench.noise_sigma, state.rng_lab)
    grads = _Grads.zeros(state.student)
    n = len(boxes)

    logits = feats @ state.student.cls.weights.T
    values, g = batch_ce(logits, lt.targets)
    loss = float(values.mean())
    grads.cls_w += (g.T @ feats) / n

    if lt.fg.any():
        ffg = feats[lt.fg]
        pred = ffg @ state.student.reg.weights.T + state.student.reg.bias
        diff = pred - lt.deltas
        val, gr = smooth_l1_batch(diff)
        n_fg = ffg.shape[0]
        loss += float(val.sum(axis=1).mean())
        grads.reg_w += (gr.T @ ffg) / n_fg
        grads.reg_b += gr.sum(axis=0) / n_fg
    return loss, grads


def _unlabelled_scene_loss(state: _PairState, scene: Scene, boxes: np.ndarray,
                           protos: ClassPrototypes, cfg: ExperimentConfig,
                           other_teacher: Detector | None) -> tuple[float, _Grads]:
    """Pseudo-label one unlabelled scene and compute the student loss.

    The rng draw order is fixed (teacher view, label-area views, student
    view) so every strategy consumes the stream identically while the
    parameters still agree.
    """
    bench = cfg.bench
    bg = bench.background_index
    state.counts["unlabelled_accesses"] += 1
    grads = _Grads.zeros(state.student)

    t_feats = scene_features(scene, boxes, protos, bench.noise_sigma, state.rng_unlab)
    aboxes, acls, ascores = _detect(state.teacher, t_feats, boxes, bg, cfg.nms_thr,
                                    cfg.score_temp)
    all_dets = [PseudoLabel(Box(*aboxes[i]), int(acls[i]), float(ascores[i]))
                for i in range(len(acls))]
    # the temporal store remembers the unfiltered detections: a confidence
    # dip below the score threshold must not look like the object vanishing
    last = state.store.record_and_fetch_last(scene.image_id, all_dets)
    keep = ascores >= cfg.score_thr
    dboxes = aboxes[keep]
    current = [d for d, k in zip(all_dets, keep) if k]
    state.counts["pseudo_labels"] += len(current)

    n_lab = len(current)
    if n_lab == 0:
        # nothing the teacher trusts in this scene; an all-background target
        # set would only drag real objects toward the background class
        return 0.0, grads
    area_feats = scene_features(scene, dboxes, protos, bench.noise_sigma,
                                state.rng_unlab)
    if cfg.pc_mode == "cross":
        other_feats = scene_features(scene, dboxes, protos, bench.noise_sigma,
                                     state.rng_unlab)

    # PC discovery; a comparator box (when present) also yields quality flags.
    # On the very first visit there is no history to disagree with, so
    # temporal verification starts from the second visit.
    first_visit = state.visits.get(scene.image_id, 0) <= 1
    pcs: list[PCSet] = []
    flags: list[QualityFlags] = []
    for i, b in enumerate(current):
        if cfg.strategy == "baseline" or (cfg.pc_mode == "temporal" and first_visit):
            pcs.append(PCSet((b.cls,), b.cls))
            flags.append(QualityFlags(0, 0))
            continue
        if cfg.pc_mode == "temporal":
            union = [d for d in all_dets if d is not b] + last
            pc, matched = temporal_pc(b, union, bg, cfg.iou_close_thr)
            comparator = matched.box if matched is not None else None
        else:
            f2 = other_feats[i]
            logits2 = other_teacher.cls.weights @ f2
            pc = cross_model_pc(b, lambda _box: int(np.argmax(logits2)))
            d2 = other_teacher.reg.weights @ f2 + other_teacher.reg.bias
            comparator = Box(*decode_batch(dboxes[i][None], d2[None])[0])
        pcs.append(pc)
        flags.append(quality_flags(b.box, comparator, cfg.t_loc))
        if pc.confusing:
            state.counts["confusing_labels"] += 1

    # proposal-to-label assignment
    n = len(boxes)
    overlaps = iou_matrix(boxes, dboxes)
    match = overlaps.argmax(axis=1)
    v = overlaps[np.arange(n), match]
    fg = v >= cfg.fg_thr
    bg_mask = v < cfg.bg_thr

    # the teacher misses objects it is not yet sure about, so unmatched
    # proposals are only weak evidence of background; subsample them to a
    # fixed ratio of the foreground rows as detectors do for class balance
    bg_idx = np.flatnonzero(bg_mask)
    cap = int(np.ceil(cfg.bg_sample_ratio * max(int(fg.sum()), 1)))
    if len(bg_idx) > cap:
        pick = state.rng_unlab.permutation(len(bg_idx))[:cap]
        keep_bg = np.zeros(n, dtype=bool)
        keep_bg[bg_idx[np.sort(pick)]] = True
        bg_mask = keep_bg

    feats = scene_features(scene, boxes, protos, bench.noise_sigma, state.rng_unlab)

    # classification terms: (row, target) pairs go through one batched CE;
    # confusing samples are routed per strategy
    rows: list[int] = []
    targets: list[int] = []
    vc_rows: list[tuple[int, int]] = []  # (proposal row, label index)
    n_contrib = 0
    for i in range(n):
        if fg[i]:
            j = int(match[i])
            pc = pcs[j]
            if not pc.confusing:
                rows.append(i)
                targets.append(current[j].cls)
                n_contrib += 1
            elif cfg.strategy == "discard":
                continue
            elif cfg.strategy == "keep":
                for member in pc.members:
                    rows.append(i)
                    targets.append(member)
                n_contrib += 1
            else:  # vc
                vc_rows.append((i, j))
                n_contrib += 1
                state.counts["confusing_fg_proposals"] += 1
        elif bg_mask[i]:
            rows.append(i)
            targets.append(bg)
            n_contrib += 1

    loss = 0.0
    if n_contrib == 0:
        return 0.0, grads

    if rows:
        sub = feats[rows]
        logits = sub @ state.student.cls.weights.T
        values, g = batch_ce(logits, targets, cfg.focal_gamma)
        loss += float(values.sum()) / n_contrib
        grads.cls_w += (g.T @ sub) / n_contrib
    for i, j in vc_rows:
        res = classification_loss_for_sample(
            feats[i], state.student.cls.weights, area_feats[j], pcs[j],
            current[j].cls, cfg.scale_mode, cfg.scale, cfg.focal_gamma)
        loss += res.value / n_contrib
        grads.cls_w += res.grad_weights / n_contrib

    # quality-gated regression on pseudo boxes
    if cfg.reg_star_enabled and fg.any():
        reg_rows = [i for i in range(n) if fg[i]
                    and not (cfg.strategy == "discard" and pcs[int(match[i])].confusing)]
        if reg_rows:
            idx = np.array(reg_rows)
            lab = match[idx]
            gate = np.array([[flags[j].q_hor, flags[j].q_ver,
                              flags[j].q_hor, flags[j].q_ver] for j in lab], dtype=np.float64)
            if gate.any():
                ffg = feats[idx]
                pred = ffg @ state.student.reg.weights.T + state.student.reg.bias
                tdeltas = encode_batch(boxes[idx], dboxes[lab])
                val, gr = smooth_l1_batch(pred - tdeltas)
                n_reg = len(reg_rows)
                loss += float((gate * val).sum(axis=1).mean())
                gr = gate * gr
                grads.reg_w += (gr.T @ ffg) / n_reg
                grads.reg_b += gr.sum(axis=0) / n_reg
    return loss, grads


def _sgd_step(state: _PairState, grads: _Grads, cfg: ExperimentConfig) -> None:
    params = state.student.params()
    new = [sgd_update(params[0], grads.cls_w, cfg.lr),
           sgd_update(params[1], grads.reg_w, cfg.lr),
           sgd_update(params[2], grads.reg_b, cfg.lr)]
    state.student.set_params(new)
    state.ema = ema_update(state.ema, new)
    state.teacher.set_params([p.copy() for p in state.ema.teacher_params])


def train(cfg: ExperimentConfig, scenes: list[Scene],
          progress: bool = False) -> RunResult:
    """Run one full teacher-student training and return its result record."""
    bench = cfg.bench
    needed = bench.n_scenes + bench.n_test_scenes
    if len(scenes) < needed:
        raise ValueError(f"dataset has {len(scenes)} scenes, config needs {needed}")
    train_scenes = scenes[:bench.n_scenes]
    test_scenes = scenes[bench.n_scenes:needed]

    protos = gen_prototypes(bench.k_fg, bench.d_a, bench.pairs, bench.pair_sim,
                            bench.seed)
    labelled_ids, unlabelled_ids = make_split(bench.n_scenes, cfg.label_ratio, cfg.seed)
    eval_cache = build_eval_cache(test_scenes, bench, protos)

    n_pairs = 2 if cfg.pc_mode == "cross" else 1
    pairs = [_init_pair(cfg, k) for k in range(n_pairs)]

    t0 = time.perf_counter()
    trajectory = []
    for it in range(cfg.iterations):
        warm = it < cfg.warmup_iters
        snapshots = [p.teacher.copy() for p in pairs] if n_pairs == 2 else [None]
        for k, state in enumerate(pairs):
            other = snapshots[1 - k] if n_pairs == 2 else None
            try:
                _train_step(state, other, cfg, bench, protos, train_scenes,
                            labelled_ids, unlabelled_ids, warm, it, k)
            except (FloatingPointError, ValueError) as exc:
                # runaway parameters surface as non-finite numbers or
                # degenerate decoded boxes somewhere inside the step
                raise RuntimeError(
                    f"training diverged at iteration {it} (pair {k}): {exc}; "
                    f"config={cfg.to_dict()}") from exc
        if (it + 1) % cfg.eval_interval == 0:
            det = pairs[0].teacher if cfg.eval_teacher else pairs[0].student
            ap = evaluate_ap(det, test_scenes, bench, score_temp=cfg.score_temp,
                             cache=eval_cache)
            trajectory.append((it + 1, ap))
            if progress:
                print(f"  iter {it + 1:6d}  AP@0.5 {ap:6.2f}")

    counts = dict(pairs[0].counts)
    return RunResult(strategy=cfg.strategy, seed=cfg.seed,
                     final_ap=trajectory[-1][1] if trajectory else float("nan"),
                     trajectory=trajectory, counts=counts,
                     wall_clock=time.perf_counter() - t0, config=cfg.to_dict(),
                     teacher=pairs[0].teacher, student=pairs[0].student)


def _train_step(state: _PairState, other: Detector | None, cfg: ExperimentConfig,
                bench: BenchConfig, protos: ClassPrototypes, train_scenes: list,
                labelled_ids: list, unlabelled_ids: list, warm: bool,
                it: int, k: int) -> None:
    sid = labelled_ids[int(state.rng_lab.integers(0, len(labelled_ids)))]
    lab_scene = train_scenes[sid]
    lab_boxes = gen_proposal_boxes(lab_scene, bench, bench.seed,
                                   state.next_visit(sid))
    loss, grads = _labelled_loss(state, lab_scene, lab_boxes,
                                 _labelled_targets(lab_scene, lab_boxes, cfg),
                                 protos, cfg)
    if not warm and cfg.unlabelled_per_step > 0 and unlabelled_ids:
        u_loss = 0.0
        u_grads = _Grads.zeros(state.student)
        for _ in range(cfg.unlabelled_per_step):
            uid = unlabelled_ids[int(state.rng_unlab.integers(0, len(unlabelled_ids)))]
            u_scene = train_scenes[uid]
            u_boxes = gen_proposal_boxes(u_scene, bench, bench.seed,
                                         state.next_visit(uid))
            sl, sg = _unlabelled_scene_loss(state, u_scene,
                                            u_boxes, protos, cfg, other)
            u_loss += sl
            u_grads.add(sg)
        r = cfg.unlabelled_per_step
        loss += cfg.lambda_u * u_loss / r
        grads.add(u_grads, cfg.lambda_u / r)
    if not np.isfinite(loss):
        raise FloatingPointError(f"loss={loss}")
    _sgd_step(state, grads, cfg)


def compare_strategies(cfg: ExperimentConfig, scenes: list[Scene], seeds: list[int],
                       include_reg_star: bool = False, include_cross: bool = False,
                       progress: bool = False) -> list[tuple[str, RunResult]]:
    """Run the strategy ablation grid with identical seeds across strategies."""
    rows = []
    variants = [(s, {"strategy": s, "reg_star_enabled": False, "pc_mode": "temporal"})
                for s in ("baseline", "discard", "keep", "vc")]
    if include_reg_star:
        variants.append(("vc+reg*", {"strategy": "vc", "reg_star_enabled": True,
                                     "pc_mode": "temporal"}))
    if include_cross:
        variants.append(("vc-cross", {"strategy": "vc", "reg_star_enabled": False,
                                      "pc_mode": "cross"}))
    for seed in seeds:
        for label, overrides in variants:
            run_cfg = cfg.replace(seed=seed, **overrides)
            if progress:
                print(f"[compare] {label} seed={seed}")
            rows.append((label, train(run_cfg, scenes, progress=False)))
    return rows


def summarize(rows: list[tuple[str, RunResult]]) -> dict:
    """Mean final AP per strategy label."""
    by_label: dict[str, list[float]] = {}
    for label, res in rows:
        by_label.setdefault(label, []).append(res.final_ap)
    return {label: float(np.mean(aps)) for label, aps in by_label.items()}


# ---------------------------------------------------------------------------
# gradient checks


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


@dataclass
class GradCheckReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        return [f"{'PASS' if e.passed else 'FAIL'}  {e.name:40s} "
                f"max rel err {e.max_rel_err:.3e} (tol {e.tol:.0e})"
                for e in self.entries]


_FD_STEP = 1e-4


def _fd_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central finite differences of a scalar function at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + _FD_STEP
        hi = fn(x)
        xf[i] = orig - _FD_STEP
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * _FD_STEP)
    return g


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(analytic - fd) / denom)


def gradcheck(seed: int, n_instances: int = 100, tol: float = 1e-6,
              corrupt: bool = False) -> GradCheckReport:
    """Finite-difference verification of every analytic gradient.

    corrupt=True deliberately perturbs one analytic gradient as a negative
    control; the corresponding entry must then report a failure.
    """
    rng = Rng(seed, 99)
    entries = []

    for gamma in (0.0, 1.5):
        worst = 0.0
        for _ in range(n_instances):
            k = int(rng.integers(3, 12))
            logits = rng.normal(scale=2.0, size=k)
            t = int(rng.integers(0, k))
            n_ign = int(rng.integers(0, max(1, k - 1)))
            pool = [i for i in range(k) if i != t]
            ignore = frozenset(int(pool[j]) for j in
                               np.argsort(rng.uniform(size=len(pool)))[:n_ign])
            spec = TargetSpec(t, ignore)
            res = masked_lse_loss(logits, spec, gamma)
            g = res.grad_logits.copy()
            if corrupt and gamma == 0.0:
                g[t] += 1e-3
            fd = _fd_grad(lambda x: masked_lse_loss(x, spec, gamma).value,
                          logits.copy())
            worst = max(worst, _rel_err(g, fd))
        entries.append(GradCheckEntry(f"masked_lse_loss gamma={gamma}", worst, tol))

    worst = 0.0
    for i in range(n_instances):
        d, k = 8, 5
        f = rng.normal(size=d)
        W = rng.normal(size=(k, d))
        f_hat = rng.normal(size=d)
        gamma = 1.5 if i % 2 else 0.0
        if i % 3 == 0:
            pc = PCSet((1,), 1)
        else:
            pc = PCSet((1, 2), 1)

        def value(f_, W_):
            return classification_loss_for_sample(
                f_, W_, f_hat, pc, 1, "constant", 3.5, gamma).value

        res = classification_loss_for_sample(f, W, f_hat, pc, 1, "constant", 3.5, gamma)
        fd_f = _fd_grad(lambda x: value(x, W), f.copy())
        fd_w = _fd_grad(lambda x: value(f, x), W.copy())
        worst = max(worst, _rel_err(res.grad_feature, fd_f),
                    _rel_err(res.grad_weights, fd_w))
    entries.append(GradCheckEntry("classification_loss_for_sample", worst, tol))

    worst = 0.0
    for _ in range(n_instances):
        pred = rng.normal(scale=1.5, size=4)
        target = rng.normal(scale=1.5, size=4)
        fl = QualityFlags(int(rng.integers(0, 2)), int(rng.integers(0, 2)))
        tgt = BoxDeltas(*target)

        def value(p):
            return reg_star_loss(BoxDeltas(*p), tgt, fl)[0]

        _, g = reg_star_loss(BoxDeltas(*pred), tgt, fl)
        fd = _fd_grad(value, pred.copy())
        worst = max(worst, _rel_err(g, fd))
    entries.append(GradCheckEntry("reg_star_loss", worst, tol))

    worst = 0.0
    for _ in range(n_instances):
        out_d, in_d = 3, 5
        head = LinearHead(rng.normal(size=(out_d, in_d)), rng.normal(size=out_d))
        f = rng.normal(size=in_d)
        u = rng.normal(size=out_d)  # random projection makes the output scalar

        def value_w(W):
            return float(u @ (W @ f + head.bias))

        def value_f(x):
            return float(u @ linear_forward(head, x))

        fd_w = _fd_grad(value_w, head.weights.copy())
        fd_f = _fd_grad(value_f, f.copy())
        worst = max(worst, _rel_err(np.outer(u, f), fd_w), _rel_err(head.weights.T @ u, fd_f))
    entries.append(GradCheckEntry("linear_forward", worst, tol))

    return GradCheckReport(entries)
