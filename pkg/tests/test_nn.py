"""Network forward/backward math against finite differences, and the
Adam update rule."""

import numpy as np
import pytest

from dynchan import ConfigError, spawn_rng
from dynchan.nn import MLP, Adam, q_loss_and_gradients


class TestMLPInit:
    def test_shapes_and_glorot_bounds(self):
        mlp = MLP([4, 8, 3], spawn_rng(0, 2))
        assert [w.shape for w in mlp.weights] == [(4, 8), (8, 3)]
        assert [b.shape for b in mlp.biases] == [(8,), (3,)]
        assert all((b == 0.0).all() for b in mlp.biases)
        for w, (fi, fo) in zip(mlp.weights, [(4, 8), (8, 3)]):
            limit = np.sqrt(6.0 / (fi + fo))
            assert np.abs(w).max() <= limit
            assert np.abs(w).max() > 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            MLP([4], spawn_rng(0, 2))
        with pytest.raises(ConfigError):
            MLP([4, 0, 2], spawn_rng(0, 2))

    def test_parameters_are_live(self):
        mlp = MLP([2, 3], spawn_rng(0, 2))
        mlp.parameters()[0][0, 0] = 123.0
        assert mlp.weights[0][0, 0] == 123.0

    def test_copy_is_independent(self):
        mlp = MLP([2, 4, 2], spawn_rng(0, 2))
        clone = mlp.copy()
        x = np.array([[0.3, -0.7]])
        np.testing.assert_array_equal(mlp.forward(x), clone.forward(x))
        clone.weights[0][:] = 0.0
        assert mlp.weights[0].any()


class TestForward:
    def test_matches_manual_relu_chain(self):
        mlp = MLP([2, 3, 2], spawn_rng(1, 2))
        mlp.weights[0][:] = [[1.0, -2.0, 0.5], [0.0, 1.0, -1.0]]
        mlp.biases[0][:] = [0.1, 0.0, -0.2]
        mlp.weights[1][:] = [[1.0, 0.0], [-1.0, 2.0], [0.5, 0.5]]
        mlp.biases[1][:] = [0.0, 1.0]
        x = np.array([[1.0, -1.0]])
        h = np.maximum(x @ mlp.weights[0] + mlp.biases[0], 0.0)
        want = h @ mlp.weights[1] + mlp.biases[1]
        np.testing.assert_array_equal(mlp.forward(x), want)

    def test_forward_cached_agrees(self):
        mlp = MLP([3, 6, 4], spawn_rng(2, 2))
        x = spawn_rng(3, 2).normal(size=(5, 3))
        out, acts = mlp.forward_cached(x)
        np.testing.assert_array_equal(out, mlp.forward(x))
        assert len(acts) == 3
        np.testing.assert_array_equal(acts[0], x)
        np.testing.assert_array_equal(acts[-1], out)


class TestGradients:
    def test_matches_central_finite_differences(self):
        rng = spawn_rng(4, 2)
        mlp = MLP([3, 5, 4, 2], rng)
        x = rng.normal(size=(4, 3))
        actions = rng.integers(2, size=4)
        targets = rng.normal(size=4)

        def loss_at():
            loss, _, _ = q_loss_and_gradients(mlp, x, actions, targets)
            return loss

        _, grads, _ = q_loss_and_gradients(mlp, x, actions, targets)
        eps = 1e-6
        for p, g in zip(mlp.parameters(), grads):
            assert p.shape == g.shape
            for ij in np.ndindex(p.shape):
                orig = p[ij]
                p[ij] = orig + eps
                up = loss_at()
                p[ij] = orig - eps
                down = loss_at()
                p[ij] = orig
                num = (up - down) / (2 * eps)
                assert num == pytest.approx(g[ij], rel=1e-4, abs=1e-7)

    def test_hand_loss_and_untaken_actions_get_no_gradient(self):
        mlp = MLP([1, 2], spawn_rng(5, 2))
        mlp.weights[0][:] = [[2.0, -1.0]]
        mlp.biases[0][:] = [0.5, 0.0]
        loss, grads, out = q_loss_and_gradients(
            mlp, np.array([[3.0]]), np.array([0]), np.array([5.0])
        )
        np.testing.assert_array_equal(out, [[6.5, -3.0]])
        assert loss == pytest.approx(2.25)
        np.testing.assert_allclose(grads[0], [[9.0, 0.0]])
        np.testing.assert_allclose(grads[1], [3.0, 0.0])


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = np.array([1.0, -2.0])
        g = np.array([0.5, -0.25])
        opt = Adam([p])
        opt.update([p], [g], lr=1e-3)
        assert opt.t == 1
        np.testing.assert_allclose(p, [1.0 - 1e-3, -2.0 + 1e-3], atol=1e-7)

    def test_updates_in_place_and_counts_steps(self):
        p = np.zeros((2, 2))
        opt = Adam([p])
        before = id(p)
        opt.update([p], [np.ones((2, 2))], lr=0.01)
        opt.update([p], [np.ones((2, 2))], lr=0.01)
        assert id(p) == before
        assert opt.t == 2
        assert (p < 0).all()

    def test_deterministic(self):
        def run():
            rng = spawn_rng(6, 2)
            p = rng.normal(size=(3, 3))
            opt = Adam([p])
            for _ in range(10):
                opt.update([p], [rng.normal(size=(3, 3))], lr=1e-2)
            return p

        np.testing.assert_array_equal(run(), run())
