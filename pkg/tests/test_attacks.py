import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_dense, random_mixed
from diaa.attacks import AttackConfig, ae_gen, attack_objective, bim, clip_box, di_aa, fgsm, get_attack, pgd
from diaa.errors import ClassIndexError, ConfigError
from diaa.layers import Dense
from diaa.network import Network
from diaa.tensor import forward


def scalar_logistic():
    # logits [0, 5x]: class 1 while x > 0, tie (-> class 0) at x = 0
    return Network((1,), 2, [Dense([[0.0], [5.0]])])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"c": 1.5}, {"c": -0.1}, {"eps": -1.0}, {"iterations": 0}, {"clip_min": 1.0, "clip_max": 0.0},
        {"targeted": True}, {"optimizer": "rmsprop"}, {"max_features": 0}, {"epsilon_ball": -0.1},
    ])
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            AttackConfig(**kwargs)

    def test_default_baseline_step(self):
        assert AttackConfig(epsilon_ball=0.3).step == pytest.approx(0.03)

    def test_unknown_attack(self):
        with pytest.raises(ConfigError):
            get_attack("cw")


class TestObjective:
    # identity network: Z(x') = x' = [1, 3]; reference x = [1, 1] sits at L2 distance 2
    def net(self):
        return Network((2,), 2, [Dense(np.eye(2))])

    def test_zero_perturbation(self):
        x = np.array([1.0, 3.0])
        value, grad = attack_objective(self.net(), x, x, 0, AttackConfig(c=0.5))
        assert value == 1.0
        np.testing.assert_array_equal(grad, [1.0, 0.0])

    def test_untargeted(self):
        value, grad = attack_objective(self.net(), [1.0, 1.0], np.array([1.0, 3.0]), 0, AttackConfig(c=0.5))
        assert value == 2.0
        # d/dx' of c * ||x' - x|| is c * (x' - x) / ||x' - x|| = 0.5 * [0, 1]
        np.testing.assert_array_equal(grad, [1.0, 0.5])

    def test_targeted(self):
        cfg = AttackConfig(c=0.5, targeted=True, target=1)
        value, grad = attack_objective(self.net(), [1.0, 1.0], np.array([1.0, 3.0]), 0, cfg)
        assert value == -2.0
        np.testing.assert_array_equal(grad, [0.0, -0.5])

    def test_bad_class(self):
        with pytest.raises(ClassIndexError):
            attack_objective(self.net(), [0.0, 0.0], np.zeros(2), 2, AttackConfig())


class TestAEGen:
    def test_empty_mask(self):
        net = random_dense(np.random.default_rng(0), [3, 4, 2])
        x = np.array([0.2, 0.5, 0.9])
        y = forward(net, x).predicted
        out, success, steps = ae_gen(x.copy(), x, y, net, AttackConfig(), np.zeros(3, bool))
        assert not success and steps == 0
        assert out.tobytes() == x.tobytes()

    def test_zero_step(self):
        net = random_dense(np.random.default_rng(1), [3, 4, 2])
        x = np.array([0.2, 0.5, 0.9])
        y = forward(net, x).predicted
        out, success, steps = ae_gen(x.copy(), x, y, net, AttackConfig(eps=0.0, iterations=5), np.ones(3, bool))
        assert not success and steps == 5
        assert out.tobytes() == x.tobytes()

    def test_scalar_logistic(self):
        # x' = 0.9 - 0.25 k: 0.65, 0.40, 0.15, then clipped from -0.10 to 0 where the logits tie
        cfg = AttackConfig(eps=0.05, iterations=10, c=0.0)
        out, success, steps = ae_gen(np.array([0.9]), np.array([0.9]), 1, scalar_logistic(), cfg, np.ones(1, bool))
        assert success and steps == 4
        assert out[0] == 0.0

    def test_prechecked_success(self):
        cfg = AttackConfig(eps=0.05, c=0.0)
        x = np.array([0.0])
        _, success, steps = ae_gen(x, x, 1, scalar_logistic(), cfg, np.ones(1, bool))
        assert success and steps == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["sgd", "adam"]))
    def test_mask_confinement(self, seed, optimizer):
        rng = np.random.default_rng(seed)
        net = random_mixed(rng)
        x = rng.random(net.input_shape)
        mask = rng.random(net.input_shape) < 0.3
        y = forward(net, x).predicted
        cfg = AttackConfig(eps=0.05, iterations=5, optimizer=optimizer)
        out, success, _ = ae_gen(x.copy(), x, y, net, cfg, mask)
        assert out[~mask].tobytes() == x[~mask].tobytes()
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert success == (forward(net, out).predicted != y)


def reference_diaa_linear(w, x, y, eps, iterations, c):
    """Pure-python DI-AA on a bias-free linear two-class model, for cross-checking."""
    n = len(x)
    z = [sum(w[k][i] * x[i] for i in range(n)) for k in range(2)]
    # box rule, l = 0, h = 1: z_i = x_i w_i - min(w_i, 0)
    zi = [x[i] * w[y][i] - min(w[y][i], 0.0) for i in range(n)]
    rel = [zi[i] / sum(zi) * z[y] for i in range(n)]
    order = sorted(range(n), key=lambda i: (-rel[i], i))
    xa = list(x)

    def label(v):
        s = [sum(w[k][i] * v[i] for i in range(n)) for k in range(2)]
        return 0 if s[0] >= s[1] else 1

    enabled = []
    for outer, feature in enumerate(order, start=1):
        enabled.append(feature)
        for _ in range(iterations):
            d = [xa[i] - x[i] for i in range(n)]
            norm = math.sqrt(sum(v * v for v in d))
            for i in enabled:
                g = w[y][i] + (c * d[i] / norm if norm > 0 else 0.0)
                xa[i] = min(1.0, max(0.0, xa[i] - eps * g))
            if label(xa) != y:
                return xa, True, outer
    return xa, False, len(order)


class TestDIAA:
    def test_scalar_logistic(self):
        out = di_aa([0.9], 1, scalar_logistic(), AttackConfig(eps=0.05, iterations=10, c=0.0))
        assert out.success and out.outer_iterations == 1 and out.inner_iterations == 4
        assert out.x_adv[0] == 0.0
        assert (out.l0, out.l1) == (1, 0.9)

    def test_already_misclassified(self):
        out = di_aa([0.0], 1, scalar_logistic(), AttackConfig())
        assert out.success and out.l0 == 0 and out.outer_iterations == 0

    @pytest.mark.parametrize("seed", range(8))
    def test_two_feature_reference(self, seed):
        rng = np.random.default_rng(seed)
        while True:
            w = rng.normal(size=(2, 2))
            x = rng.random(2)
            y = int(np.argmax(w @ x))
            # the decomposition needs a positive winning logit
            if (w @ x)[y] > 0:
                break
        net = Network((2,), 2, [Dense(w)])
        cfg = AttackConfig(eps=0.05, iterations=15, c=0.5)
        out = di_aa(x, y, net, cfg)
        ref, success, outer = reference_diaa_linear(w.tolist(), x.tolist(), y, 0.05, 15, 0.5)
        assert out.success == success and out.outer_iterations == outer
        np.testing.assert_allclose(out.x_adv, ref, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_l0_bounded_by_outer(self, seed):
        rng = np.random.default_rng(300 + seed)
        net = random_mixed(rng)
        x = rng.random(net.input_shape)
        y = forward(net, x).predicted
        out = di_aa(x, y, net, AttackConfig(eps=0.05, iterations=5))
        assert out.l0 <= out.outer_iterations
        assert out.x_adv.min() >= 0.0 and out.x_adv.max() <= 1.0

    def test_max_features(self):
        net = Network((3,), 2, [Dense([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])])
        out = di_aa([0.9, 0.9, 0.9], 0, net, AttackConfig(eps=1e-4, iterations=2, max_features=2))
        assert not out.success and out.outer_iterations == 2 and out.l0 <= 2

    def test_targeted(self):
        net = Network((3,), 3, [Dense(np.eye(3))])
        x = np.array([0.8, 0.5, 0.2])
        cfg = AttackConfig(eps=0.05, iterations=30, c=0.1, targeted=True, target=2)
        out = di_aa(x, 0, net, cfg)
        assert out.success and out.predicted == 2

    def test_adam_mode(self):
        out = di_aa([0.9], 1, scalar_logistic(), AttackConfig(eps=0.1, iterations=50, c=0.0, optimizer="adam"))
        assert out.success and out.predicted == 0


def logistic_pair():
    # class 0 favoured by feature 0, class 1 by feature 1
    return Network((3,), 2, [Dense([[2.0, -1.0, 0.0], [-1.0, 2.0, 0.5]])])


class TestFGSM:
    def test_zero_ball_identity(self):
        net = logistic_pair()
        x = np.array([0.6, 0.3, 0.5])
        out = fgsm(x, 0, net, AttackConfig(epsilon_ball=0.0))
        assert out.x_adv.tobytes() == x.tobytes() and not out.success

    def test_closed_form(self):
        net = logistic_pair()
        x = np.array([0.6, 0.3, 0.5])
        # CE gradient for class 0 points along p_1 (w_1 - w_0) = p_1 * [-3, 3, 0.5]
        expected = np.clip(x + 0.2 * np.sign([-3.0, 3.0, 0.5]), 0, 1)
        np.testing.assert_array_equal(fgsm(x, 0, net, AttackConfig(epsilon_ball=0.2)).x_adv, expected)

    def test_linf_confinement(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            net = random_mixed(rng)
            x = rng.random(net.input_shape)
            out = fgsm(x, forward(net, x).predicted, net, AttackConfig(epsilon_ball=0.07))
            assert np.abs(out.x_adv - x).max() <= 0.07


class TestBIM:
    def test_one_step_equals_fgsm(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            net = random_mixed(rng)
            x = rng.random(net.input_shape)
            y = forward(net, x).predicted
            cfg = AttackConfig(epsilon_ball=0.1, baseline_step=0.1, baseline_steps=1)
            assert bim(x, y, net, cfg).x_adv.tobytes() == fgsm(x, y, net, cfg).x_adv.tobytes()

    def test_three_steps_by_hand(self):
        net = Network((3,), 2, [Dense([[20.0, -1.0, 0.0], [-1.0, 2.0, 0.5]])])
        x = np.array([0.6, 0.3, 0.5])
        cfg = AttackConfig(epsilon_ball=0.1, baseline_step=0.04, baseline_steps=3)
        out = bim(x, 0, net, cfg)
        # direction sign(w_1 - w_0) = [-1, 1, 1]; offsets 0.04, 0.08, then 0.12 projected to 0.1
        expected = x.copy()
        for _ in range(3):
            expected = np.clip(expected + 0.04 * np.array([-1.0, 1.0, 1.0]), x - 0.1, x + 0.1)
        assert not out.success and out.inner_iterations == 3
        # the projection may shave one ulp to keep the ball exact
        np.testing.assert_allclose(out.x_adv, expected, rtol=0, atol=1e-15)
        assert np.all(np.abs(out.x_adv - x) <= 0.1)

    def test_three_steps_scalar_logistic(self):
        # CE for class 1 falls as x rises, so each step moves x down by 0.01
        out = bim([0.9], 1, scalar_logistic(), AttackConfig(epsilon_ball=0.1, baseline_step=0.01, baseline_steps=3))
        expected = 0.9
        for _ in range(3):
            expected = min(max(expected - 0.01, 0.9 - 0.1), 0.9 + 0.1)
        assert not out.success and out.x_adv[0] == pytest.approx(expected, abs=1e-15)

    def test_early_exit(self):
        out = bim([0.05], 1, scalar_logistic(), AttackConfig(epsilon_ball=0.1, baseline_step=0.06))
        assert out.success and out.inner_iterations == 1 and out.x_adv[0] == 0.0


class TestPGD:
    def test_zero_ball(self):
        net = logistic_pair()
        x = np.array([0.6, 0.3, 0.5])
        assert pgd(x, 0, net, AttackConfig(epsilon_ball=0.0)).x_adv.tobytes() == x.tobytes()

    def test_seeded(self):
        net = logistic_pair()
        x = np.array([0.6, 0.3, 0.5])
        cfg = AttackConfig(epsilon_ball=0.05, baseline_steps=3)
        a = pgd(x, 0, net, cfg, np.random.default_rng(4)).x_adv
        b = pgd(x, 0, net, cfg, np.random.default_rng(4)).x_adv
        c = pgd(x, 0, net, cfg, np.random.default_rng(5)).x_adv
        assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()

    def test_projection(self):
        rng = np.random.default_rng(2)
        for i in range(100):
            net = random_dense(rng, [5, 4, 3])
            x = rng.random(5)
            eps = float(rng.uniform(0.01, 0.3))
            out = pgd(x, forward(net, x).predicted, net, AttackConfig(epsilon_ball=eps, baseline_steps=5), rng)
            assert np.all(np.abs(out.x_adv - x) <= eps)
            assert out.x_adv.min() >= 0.0 and out.x_adv.max() <= 1.0


class TestClipBox:
    def test_examples(self):
        np.testing.assert_array_equal(clip_box(np.array([-0.5, 0.3, 1.7])), [0.0, 0.3, 1.0])
        np.testing.assert_array_equal(clip_box(np.array([0.5]), 0.6, 0.9), [0.6])

    def test_bad_bounds(self):
        with pytest.raises(ConfigError):
            clip_box(np.zeros(2), 1.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-10, 10)))
    def test_idempotent_and_in_box(self, x):
        once = clip_box(x)
        assert np.all((once >= 0) & (once <= 1))
        assert clip_box(once).tobytes() == once.tobytes()
