import math
from fractions import Fraction

import numpy as np
import pytest

import reference_impls as ref
from amoslab.baselines import (
    AdaGradHyperParams,
    AdamWHyperParams,
    SGDHyperParams,
    adagrad_step,
    adamw_alpha,
    adamw_step,
    sgd_alpha,
    sgd_step,
)
from amoslab.errors import ConfigError


class TestAdamWSchedule:
    def test_linear_is_zero_at_max_steps(self):
        hp = AdamWHyperParams(alpha=0.1, warmup_steps=10, max_steps=100)
        assert adamw_alpha(100, hp) == 0.0

    def test_piecewise_linear_and_continuous(self):
        hp = AdamWHyperParams(alpha=0.5, warmup_steps=20, max_steps=200)
        values = [adamw_alpha(t, hp) for t in range(201)]
        assert values[19] == pytest.approx(0.5)  # ramp reaches the peak
        assert max(values) <= 0.5
        assert values[-1] == 0.0
        diffs = np.diff(values)
        ramp, decay = diffs[:18], diffs[20:]
        assert np.allclose(ramp, ramp[0]) and np.all(ramp > 0)
        assert np.allclose(decay, decay[0]) and np.all(decay < 0)
        assert np.all(np.abs(diffs) <= 0.5 / 18 + 1e-12)  # no jumps anywhere

    def test_rsqrt_schedule(self):
        hp = AdamWHyperParams(
            alpha=0.2, warmup_steps=5, schedule="rsqrt", rsqrt_ref_step=100
        )
        assert adamw_alpha(100, hp) == pytest.approx(0.2)
        assert adamw_alpha(400, hp) == pytest.approx(0.1)

    def test_linear_requires_max_steps(self):
        with pytest.raises(ConfigError):
            AdamWHyperParams(alpha=0.1, warmup_steps=10, max_steps=5)


class TestAdamWStep:
    def test_rmsprop_degenerate(self):
        # beta1 = 0 and no decay reduces to alpha_t * g / (sqrt(v_hat) + eps)
        hp = AdamWHyperParams(alpha=0.1, beta1=0.0, beta2=0.9, schedule="constant")
        theta, g = np.array([2.0]), np.array([0.5])
        slots = {"m": np.zeros(1), "v": np.zeros(1)}
        delta, _ = adamw_step(theta, g, slots, hp, t=0)
        v_hat = (0.1 * 0.25) / (1 - 0.9)
        assert delta[0] == pytest.approx(0.1 * 0.5 / (math.sqrt(v_hat) + hp.epsilon), rel=1e-12)

    def test_zero_update_at_schedule_end(self):
        hp = AdamWHyperParams(alpha=0.1, warmup_steps=2, max_steps=50)
        slots = {"m": np.ones(2), "v": np.ones(2)}
        delta, _ = adamw_step(np.ones(2), np.ones(2), slots, hp, t=50)
        np.testing.assert_array_equal(delta, np.zeros(2))

    def test_scalar_walkthrough_matches_reference(self):
        hp = AdamWHyperParams(
            alpha=0.01, beta1=0.9, beta2=0.99, weight_decay=0.02, schedule="constant"
        )
        theta, g = np.array([0.7]), np.array([-0.3])
        slots = {"m": np.array([0.1]), "v": np.array([0.04])}
        delta, new = adamw_step(theta, g, slots, hp, t=3)
        d_ref, m_ref, v_ref = ref.ref_adamw_step(
            ref.to_dict(theta),
            ref.to_dict(g),
            (1,),
            ref.to_dict(slots["m"]),
            ref.to_dict(slots["v"]),
            alpha=hp.alpha,
            beta1=hp.beta1,
            beta2=hp.beta2,
            eps=hp.epsilon,
            weight_decay=hp.weight_decay,
            t=3,
            schedule="constant",
        )
        assert delta[0] == pytest.approx(d_ref[(0,)], abs=1e-15)
        assert new["m"][0] == pytest.approx(m_ref[(0,)], abs=1e-15)
        assert new["v"][0] == pytest.approx(v_ref[(0,)], abs=1e-15)


class TestSGD:
    def test_schedule_start(self):
        hp = SGDHyperParams(alpha=0.1, lam=0.01)
        assert sgd_alpha(0, hp) == 0.1

    def test_hand_value(self):
        hp = SGDHyperParams(alpha=0.1, lam=0.01)
        assert sgd_alpha(1000, hp) == pytest.approx(0.05, rel=1e-14)

    def test_lambda_zero_constant(self):
        hp = SGDHyperParams(alpha=0.2, lam=0.0)
        for t in (0, 10, 10**6):
            assert sgd_alpha(t, hp) == 0.2

    def test_inverse_rate_recurrence_exact(self):
        # the schedule formula satisfies 1/a_{t+1} = 1/a_t + lam exactly in
        # rational arithmetic (telescoping identity)
        alpha, lam = Fraction(1, 2), Fraction(1, 4)
        for t in range(200):
            a_t = alpha / (1 + alpha * lam * t)
            a_next = alpha / (1 + alpha * lam * (t + 1))
            assert 1 / a_next == 1 / a_t + lam

    def test_inverse_rate_recurrence_general(self):
        hp = SGDHyperParams(alpha=0.137, lam=0.0213)
        for t in range(0, 500, 7):
            lhs = 1.0 / sgd_alpha(t + 1, hp)
            rhs = 1.0 / sgd_alpha(t, hp) + hp.lam
            assert lhs == pytest.approx(rhs, rel=1e-13)

    def test_step_value(self):
        hp = SGDHyperParams(alpha=0.1, lam=0.5)
        delta = sgd_step(np.array([2.0]), np.array([1.0]), hp, t=0)
        assert delta[0] == pytest.approx(0.1 * (1.0 + 0.5 * 2.0), rel=1e-14)


class TestAdaGrad:
    def test_constant_gradient_decay(self):
        hp = AdaGradHyperParams(alpha=1.0, epsilon=0.0)
        theta = np.zeros(1)
        slots = {"accum": np.zeros(1)}
        seen = []
        for _ in range(3):
            delta, slots = adagrad_step(theta, np.ones(1), slots, hp)
            seen.append(float(delta[0]))
        assert seen == pytest.approx([1.0, 1 / math.sqrt(2), 1 / math.sqrt(3)], rel=1e-14)

    def test_zero_gradient_inert(self):
        hp = AdaGradHyperParams(alpha=1.0)
        slots = {"accum": np.array([4.0])}
        delta, new = adagrad_step(np.ones(1), np.zeros(1), slots, hp)
        assert delta[0] == 0.0
        assert new["accum"][0] == 4.0

    def test_first_step_is_alpha_sign(self):
        hp = AdaGradHyperParams(alpha=0.3)
        delta, _ = adagrad_step(np.zeros(2), np.array([0.7, -2.0]), {"accum": np.zeros(2)}, hp)
        np.testing.assert_allclose(delta, [0.3, -0.3], rtol=1e-8)


class TestBaselineOracleEquivalence:
    def test_randomized_against_references(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            shape = tuple(int(d) for d in rng.integers(1, 5, size=int(rng.integers(1, 3))))
            theta = rng.normal(size=shape)
            g = rng.normal(size=shape)
            t = int(rng.integers(0, 100))

            hp = AdamWHyperParams(
                alpha=float(rng.uniform(1e-4, 0.3)),
                beta1=float(rng.uniform(0.0, 0.99)),
                beta2=float(rng.uniform(0.5, 0.9999)),
                weight_decay=float(rng.uniform(0.0, 0.1)),
                warmup_steps=int(rng.integers(0, 10)),
                max_steps=int(rng.integers(150, 400)),
            )
            m, v = np.abs(rng.normal(size=shape)), np.abs(rng.normal(size=shape))
            delta, _ = adamw_step(theta, g, {"m": m.copy(), "v": v.copy()}, hp, t)
            d_ref, _, _ = ref.ref_adamw_step(
                ref.to_dict(theta),
                ref.to_dict(g),
                shape,
                ref.to_dict(m),
                ref.to_dict(v),
                alpha=hp.alpha,
                beta1=hp.beta1,
                beta2=hp.beta2,
                eps=hp.epsilon,
                weight_decay=hp.weight_decay,
                t=t,
                warmup_steps=hp.warmup_steps,
                max_steps=hp.max_steps,
                schedule="linear",
            )
            for idx, val in d_ref.items():
                assert abs(val - float(delta[idx])) < 1e-12

            shp = SGDHyperParams(alpha=float(rng.uniform(1e-3, 0.5)), lam=float(rng.uniform(0, 0.2)))
            delta = sgd_step(theta, g, shp, t)
            d_ref = ref.ref_sgd_step(
                ref.to_dict(theta), ref.to_dict(g), shape, alpha=shp.alpha, lam=shp.lam, t=t
            )
            for idx, val in d_ref.items():
                assert abs(val - float(delta[idx])) < 1e-12

            ahp = AdaGradHyperParams(alpha=float(rng.uniform(1e-3, 0.5)))
            accum = np.abs(rng.normal(size=shape))
            delta, _ = adagrad_step(theta, g, {"accum": accum.copy()}, ahp)
            d_ref, _ = ref.ref_adagrad_step(
                ref.to_dict(theta),
                ref.to_dict(g),
                shape,
                ref.to_dict(accum),
                alpha=ahp.alpha,
                eps=ahp.epsilon,
            )
            for idx, val in d_ref.items():
                assert abs(val - float(delta[idx])) < 1e-12
