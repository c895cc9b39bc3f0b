import numpy as np
import pytest

from vclearn.linear import (EmaState, LinearHead, ema_update, linear_forward,
                            linear_forward_batch, sgd_update)
from vclearn.rng import Rng


def head(w, b):
    return LinearHead(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64))


class TestLinearForward:
    def test_identity_weights(self):
        out = linear_forward(head([[1, 0], [0, 1]], [0, 0]), np.array([3.0, 4.0]))
        assert np.allclose(out, [3.0, 4.0])

    def test_dot_product_with_bias(self):
        out = linear_forward(head([[1, 1]], [0.5]), np.array([1.0, 2.0]))
        assert np.allclose(out, [3.5])

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            linear_forward(head([[1, 1]], [0.0]), np.array([1.0, 2.0, 3.0]))

    def test_batch_matches_single(self):
        rng = Rng(3, 1)
        h = LinearHead.init(4, 6, rng)
        feats = rng.normal(size=(5, 6))
        batch = linear_forward_batch(h, feats)
        for i in range(5):
            assert np.allclose(batch[i], linear_forward(h, feats[i]))


class TestSgdUpdate:
    def test_one_step(self):
        out = sgd_update(np.array([1.0]), np.array([2.0]), 0.1)
        assert np.allclose(out, [0.8])

    def test_zero_grad_fixed_point(self):
        p = np.array([1.0, -2.0])
        assert np.array_equal(sgd_update(p, np.zeros(2), 0.5), p)

    def test_elementwise(self):
        out = sgd_update(np.array([0.0, 0.0]), np.array([1.0, -1.0]), 0.5)
        assert np.allclose(out, [-0.5, 0.5])

    def test_nonfinite_grads_abort(self):
        with pytest.raises(FloatingPointError):
            sgd_update(np.array([1.0]), np.array([np.nan]), 0.1)


class TestEmaUpdate:
    def test_one_step(self):
        st = EmaState([np.array([1.0])], 0.9)
        assert np.allclose(ema_update(st, [np.array([0.0])]).teacher_params[0], [0.9])

    def test_zero_momentum_copies_student(self):
        st = EmaState([np.array([5.0, -3.0])], 0.0)
        s = [np.array([1.0, 2.0])]
        assert np.array_equal(ema_update(st, s).teacher_params[0], s[0])

    def test_closed_form_recursion(self):
        m, k = 0.97, 40
        t0 = np.array([2.0, -1.0])
        s = [np.array([0.5, 0.25])]
        st = EmaState([t0.copy()], m)
        for _ in range(k):
            st = ema_update(st, s)
        expect = m ** k * t0 + (1 - m ** k) * s[0]
        assert np.allclose(st.teacher_params[0], expect, atol=1e-12, rtol=0)

    def test_shape_mismatch_rejected(self):
        st = EmaState([np.zeros(2)], 0.9)
        with pytest.raises(ValueError):
            ema_update(st, [np.zeros(3)])

    def test_bad_momentum_rejected(self):
        with pytest.raises(ValueError):
            EmaState([np.zeros(1)], 1.0)


def test_init_deterministic():
    a = LinearHead.init(3, 5, Rng(11, 0))
    b = LinearHead.init(3, 5, Rng(11, 0))
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.bias, b.bias)
