import numpy as np
import pytest

from vclearn.boxes import Box
from vclearn.potential import QualityFlags
from vclearn.regression import (BoxDeltas, decode_batch, decode_deltas,
                                encode_batch, encode_deltas, reg_star_loss,
                                smooth_l1, smooth_l1_batch, smooth_l1_grad)
from vclearn.rng import Rng


def random_box(rng, lo=0.0, hi=60.0):
    x1, y1 = rng.uniform(lo, hi, size=2)
    w, h = rng.uniform(5, 30, size=2)
    return Box(float(x1), float(y1), float(x1 + w), float(y1 + h))


class TestEncodeDecode:
    def test_identity(self):
        b = Box(2, 3, 12, 23)
        d = encode_deltas(b, b)
        assert np.allclose(d.as_array(), 0.0)

    def test_double_width_log_two(self):
        p = Box(0, 0, 10, 10)
        t = Box(-5, 0, 15, 10)
        assert encode_deltas(p, t).tw == pytest.approx(np.log(2))

    def test_round_trip(self):
        rng = Rng(40, 1)
        for _ in range(100):
            p, t = random_box(rng), random_box(rng)
            back = decode_deltas(encode_deltas(p, t), p)
            assert np.allclose(back.as_array(), t.as_array(), atol=1e-9, rtol=0)

    def test_batch_matches_single(self):
        rng = Rng(41, 1)
        props = [random_box(rng) for _ in range(20)]
        tgts = [random_box(rng) for _ in range(20)]
        parr = np.stack([b.as_array() for b in props])
        tarr = np.stack([b.as_array() for b in tgts])
        enc = encode_batch(parr, tarr)
        for i in range(20):
            assert np.allclose(enc[i], encode_deltas(props[i], tgts[i]).as_array(),
                               atol=1e-12, rtol=0)
        dec = decode_batch(parr, enc)
        assert np.allclose(dec, tarr, atol=1e-9, rtol=0)


class TestSmoothL1:
    def test_zero(self):
        assert smooth_l1(0.0) == 0.0

    def test_knee(self):
        assert smooth_l1(1.0, 1.0) == pytest.approx(0.5)

    def test_linear_branch(self):
        assert smooth_l1(3.0, 1.0) == pytest.approx(2.5)

    def test_continuity_at_knee(self):
        for beta in (0.5, 1.0, 2.0):
            eps = 1e-9
            assert abs(smooth_l1(beta - eps, beta) - smooth_l1(beta + eps, beta)) < 1e-8

    def test_convexity_random_midpoints(self):
        rng = Rng(42, 1)
        for _ in range(200):
            a, b = rng.normal(scale=3.0, size=2)
            mid = smooth_l1((a + b) / 2)
            assert mid <= (smooth_l1(a) + smooth_l1(b)) / 2 + 1e-12

    def test_bad_beta_rejected(self):
        with pytest.raises(ValueError):
            smooth_l1(1.0, 0.0)

    def test_batch_matches_scalar(self):
        rng = Rng(43, 1)
        diff = rng.normal(scale=2.0, size=(10, 4))
        val, grad = smooth_l1_batch(diff)
        for i in range(10):
            for j in range(4):
                assert val[i, j] == pytest.approx(smooth_l1(diff[i, j]), abs=1e-12)
                assert grad[i, j] == pytest.approx(smooth_l1_grad(diff[i, j]), abs=1e-12)


class TestRegStarLoss:
    def test_perfect_prediction_zero(self):
        d = BoxDeltas(0.1, 0.2, 0.3, 0.4)
        val, grad = reg_star_loss(d, d, QualityFlags(1, 1))
        assert val == 0.0 and np.allclose(grad, 0.0)

    def test_fully_gated_zero(self):
        val, grad = reg_star_loss(BoxDeltas(5, 5, 5, 5), BoxDeltas(0, 0, 0, 0),
                                  QualityFlags(0, 0))
        assert val == 0.0
        assert np.array_equal(grad, np.zeros(4))

    def test_horizontal_only_sensitivity(self):
        t = BoxDeltas(0, 0, 0, 0)
        base, _ = reg_star_loss(BoxDeltas(0.5, 0, 0, 0), t, QualityFlags(1, 0))
        moved_y, _ = reg_star_loss(BoxDeltas(0.5, 0.9, 0, 0.7), t, QualityFlags(1, 0))
        assert moved_y == base
        moved_x, _ = reg_star_loss(BoxDeltas(0.8, 0, 0, 0), t, QualityFlags(1, 0))
        assert moved_x != base

    def test_eq_pairing_x_w_horizontal_y_h_vertical(self):
        t = BoxDeltas(0, 0, 0, 0)
        val_h, grad_h = reg_star_loss(BoxDeltas(0.3, 0.4, 0.5, 0.6), t, QualityFlags(1, 0))
        assert val_h == pytest.approx(smooth_l1(0.3) + smooth_l1(0.5))
        assert grad_h[1] == 0.0 and grad_h[3] == 0.0
        val_v, grad_v = reg_star_loss(BoxDeltas(0.3, 0.4, 0.5, 0.6), t, QualityFlags(0, 1))
        assert val_v == pytest.approx(smooth_l1(0.4) + smooth_l1(0.6))
        assert grad_v[0] == 0.0 and grad_v[2] == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = Rng(44, 1)
        step = 1e-4
        for _ in range(50):
            pred = rng.normal(scale=1.5, size=4)
            tgt = BoxDeltas(*rng.normal(scale=1.5, size=4))
            fl = QualityFlags(int(rng.integers(0, 2)), int(rng.integers(0, 2)))
            _, grad = reg_star_loss(BoxDeltas(*pred), tgt, fl)
            for i in range(4):
                hi = pred.copy(); hi[i] += step
                lo = pred.copy(); lo[i] -= step
                fd = (reg_star_loss(BoxDeltas(*hi), tgt, fl)[0]
                      - reg_star_loss(BoxDeltas(*lo), tgt, fl)[0]) / (2 * step)
                assert grad[i] == pytest.approx(fd, abs=1e-6)
