"""Adam recurrence and warmup schedule against hand-computed values."""

import numpy as np
import pytest

from kgadapters.optim import AdamState, adam_step, init_adam, warmup_lr
from kgadapters.params import ParamSet


def scalar_params(value=0.5):
    p = ParamSet()
    p.add("w", np.array([value], dtype=np.float32))
    return p


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = scalar_params()
        before = p.get("w").copy()
        state = init_adam(p)
        adam_step(p, {"w": np.zeros(1, dtype=np.float32)}, state, lr=0.1)
        np.testing.assert_array_equal(p.get("w"), before)
        assert state.step == 1

    def test_first_step_bias_corrected(self):
        # m_hat = v_hat = 1 after one unit-gradient step, so the update is
        # -lr / (1 + eps) ~ -0.1
        p = scalar_params(0.0)
        state = init_adam(p)
        adam_step(p, {"w": np.ones(1, dtype=np.float32)}, state, lr=0.1)
        assert p.get("w")[0] == pytest.approx(-0.1, abs=1e-6)

    def test_two_identical_steps_follow_recurrence(self):
        p = scalar_params(0.5)
        state = init_adam(p)
        g = np.ones(1, dtype=np.float32)
        adam_step(p, {"w": g}, state, lr=0.1)
        adam_step(p, {"w": g}, state, lr=0.1)
        # hand recurrence: m2 = 0.19, v2 = 0.001999, and both bias-corrected
        # estimates are exactly 1, so each step moves by -0.1/(1+1e-8)
        assert state.m["w"][0] == pytest.approx(0.19, rel=1e-6)
        assert state.v["w"][0] == pytest.approx(0.001999, rel=1e-5)
        assert p.get("w")[0] == pytest.approx(0.5 - 0.2, abs=2e-6)
        assert state.step == 2

    def test_lr_zero_is_identity_on_params(self):
        rng = np.random.default_rng(0)
        p = ParamSet()
        p.add("w", rng.standard_normal((3, 4)).astype(np.float32))
        before = p.get("w").copy()
        state = init_adam(p)
        adam_step(p, {"w": rng.standard_normal((3, 4)).astype(np.float32)}, state, lr=0.0)
        np.testing.assert_array_equal(p.get("w"), before)
        assert state.step == 1

    def test_only_trainable_params_change(self):
        p = ParamSet()
        p.add("a", np.zeros(2, dtype=np.float32), trainable=True)
        p.add("b", np.zeros(2, dtype=np.float32), trainable=False)
        state = init_adam(p)
        adam_step(p, {"a": np.ones(2, dtype=np.float32)}, state, lr=0.1)
        assert not np.array_equal(p.get("a"), np.zeros(2))
        np.testing.assert_array_equal(p.get("b"), np.zeros(2, dtype=np.float32))

    def test_missing_gradient_errors(self):
        p = scalar_params()
        state = init_adam(p)
        with pytest.raises(KeyError, match="w"):
            adam_step(p, {}, state, lr=0.1)


class TestWarmup:
    def test_ramp_endpoint(self):
        assert warmup_lr(10_000, 1e-4, 10_000) == pytest.approx(1e-4)

    def test_step_zero(self):
        assert warmup_lr(0, 1e-4, 10_000) == 0.0

    def test_midpoint_interpolation(self):
        assert warmup_lr(5_000, 1e-4, 10_000) == pytest.approx(5e-5)

    def test_constant_after_warmup(self):
        assert warmup_lr(20_000, 1e-4, 10_000) == pytest.approx(1e-4)

    def test_monotone_non_decreasing(self):
        values = [warmup_lr(s, 3e-4, 17) for s in range(0, 60)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_invalid_warmup(self):
        with pytest.raises(ValueError):
            warmup_lr(1, 1e-4, 0)
