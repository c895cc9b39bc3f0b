import numpy as np
import pytest

from vclearn.boxes import (BACKGROUND, Box, LabelStore, PseudoLabel,
                           assign_proposals, filter_by_score, iou, iou_matrix,
                           nms, nms_indices, record_and_fetch_last)
from vclearn.rng import Rng


def random_boxes(rng, n, lo=0.0, hi=80.0, smin=5.0, smax=30.0):
    xy = np.stack([rng.uniform(lo, hi, size=n), rng.uniform(lo, hi, size=n)], axis=1)
    wh = np.stack([rng.uniform(smin, smax, size=n), rng.uniform(smin, smax, size=n)],
                  axis=1)
    return np.concatenate([xy, xy + wh], axis=1)


class TestBox:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, np.nan, 1)

    def test_properties(self):
        b = Box(1, 2, 4, 6)
        assert b.width == 3 and b.height == 4 and b.area == 12


class TestIou:
    def test_identical(self):
        b = Box(0, 0, 2, 2)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_one_third(self):
        assert iou(Box(0, 0, 2, 2), Box(1, 0, 3, 2)) == pytest.approx(1 / 3)

    def test_symmetry(self):
        rng = Rng(20, 1)
        boxes = random_boxes(rng, 40)
        for i in range(0, 40, 2):
            a = Box(*boxes[i])
            b = Box(*boxes[i + 1])
            assert iou(a, b) == iou(b, a)

    def test_matrix_matches_scalar(self):
        rng = Rng(21, 1)
        a = random_boxes(rng, 6)
        b = random_boxes(rng, 5)
        m = iou_matrix(a, b)
        for i in range(6):
            for j in range(5):
                assert m[i, j] == pytest.approx(iou(Box(*a[i]), Box(*b[j])), abs=1e-12)


class TestNms:
    def test_single_detection_unchanged(self):
        dets = [(Box(0, 0, 2, 2), 0, 0.9)]
        assert nms(dets, 0.5) == dets

    def test_same_class_suppression(self):
        hi = (Box(0, 0, 10, 10), 0, 0.8)
        lo = (Box(0.5, 0, 10.5, 10), 0, 0.6)
        assert nms([hi, lo], 0.5) == [hi]

    def test_different_classes_both_survive(self):
        a = (Box(0, 0, 10, 10), 0, 0.8)
        b = (Box(0.5, 0, 10.5, 10), 1, 0.6)
        assert nms([a, b], 0.5) == [a, b]

    def test_idempotent(self):
        rng = Rng(22, 1)
        boxes = random_boxes(rng, 15)
        dets = [(Box(*boxes[i]), int(rng.integers(0, 3)), float(rng.uniform()))
                for i in range(15)]
        once = nms(dets, 0.4)
        assert nms(once, 0.4) == once

    def test_indices_match_list_version(self):
        rng = Rng(23, 1)
        for _ in range(100):
            n = int(rng.integers(1, 15))
            boxes = random_boxes(rng, n)
            cls = np.array([int(rng.integers(0, 3)) for _ in range(n)])
            scores = rng.uniform(size=n)
            dets = [(Box(*boxes[i]), int(cls[i]), float(scores[i])) for i in range(n)]
            ref = nms(dets, 0.45)
            idx = nms_indices(boxes, cls, scores, 0.45)
            assert [dets[i] for i in idx] == ref


class TestFilterByScore:
    def test_keeps_above_threshold(self):
        dets = [(Box(0, 0, 1, 1), 0, 0.9), (Box(2, 2, 3, 3), 1, 0.5)]
        out = filter_by_score(dets, 0.7)
        assert len(out) == 1 and out[0].score == 0.9

    def test_zero_threshold_keeps_all(self):
        dets = [(Box(0, 0, 1, 1), 0, 0.1), (Box(2, 2, 3, 3), 1, 0.0)]
        assert len(filter_by_score(dets, 0.0)) == 2

    def test_boundary_inclusive(self):
        dets = [(Box(0, 0, 1, 1), 0, 0.7)]
        assert len(filter_by_score(dets, 0.7)) == 1

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            filter_by_score([], 1.5)


class TestAssignProposals:
    def test_identical_box_foreground(self):
        lab = [PseudoLabel(Box(0, 0, 10, 10), 2, 0.9)]
        out = assign_proposals([Box(0, 0, 10, 10)], lab, 0.5, 0.5)
        assert out[0].foreground and out[0].label_index == 0
        assert out[0].max_iou == pytest.approx(1.0)

    def test_disjoint_background(self):
        lab = [PseudoLabel(Box(0, 0, 10, 10), 2, 0.9)]
        out = assign_proposals([Box(50, 50, 60, 60)], lab, 0.5, 0.5)
        assert out[0].background and not out[0].foreground
        assert out[0].label_index == BACKGROUND

    def test_argmax_selects_higher_overlap(self):
        labs = [PseudoLabel(Box(0, 0, 10, 10), 0, 0.9),
                PseudoLabel(Box(20, 0, 30, 10), 1, 0.9)]
        p = Box(2, 0, 12, 10)  # IoU 2/3 with first, 0 with second
        out = assign_proposals([p], labs, 0.5, 0.5)
        assert out[0].label_index == 0

    def test_fg_below_bg_rejected(self):
        with pytest.raises(ValueError):
            assign_proposals([], [], 0.3, 0.5)

    def test_brute_force_oracle(self):
        rng = Rng(24, 1)
        for _ in range(100):
            np_, nl = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            props = [Box(*b) for b in random_boxes(rng, np_)]
            labs = [PseudoLabel(Box(*b), int(rng.integers(0, 4)), 0.9)
                    for b in random_boxes(rng, nl)]
            out = assign_proposals(props, labs, 0.5, 0.5)
            for a, p in zip(out, props):
                ious = [iou(p, l.box) for l in labs]
                best = int(np.argmax(ious))
                assert a.max_iou == pytest.approx(max(ious), abs=1e-12)
                if max(ious) >= 0.5:
                    assert a.foreground and a.label_index == best
                else:
                    assert not a.foreground and a.label_index == BACKGROUND
                assert a.background == (max(ious) < 0.5)


class TestLabelStore:
    def test_first_visit_empty(self):
        store = LabelStore()
        assert record_and_fetch_last(store, 7, [PseudoLabel(Box(0, 0, 1, 1), 0, 0.9)]) == []

    def test_second_visit_returns_first(self):
        store = LabelStore()
        first = [PseudoLabel(Box(0, 0, 1, 1), 0, 0.9)]
        store.record_and_fetch_last(3, first)
        assert store.record_and_fetch_last(3, []) == first

    def test_replay_oracle(self):
        rng = Rng(25, 1)
        store = LabelStore()
        history: dict = {}
        for step in range(300):
            img = int(rng.integers(0, 10))
            current = [PseudoLabel(Box(0, 0, 1 + step % 5 + 1, 2), int(rng.integers(0, 3)),
                                   float(rng.uniform()))]
            got = store.record_and_fetch_last(img, current)
            assert got == history.get(img, [])
            history[img] = current
        assert store.visits == 300
