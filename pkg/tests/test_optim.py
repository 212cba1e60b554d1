import math

import numpy as np
import pytest

from conftest import random_instance
from ideotrace.data import SocialGraph, TimeBinnedObservations
from ideotrace.errors import DataFormatError, DivergedError
from ideotrace.model import Hyperparameters, LossBreakdown, ModelState, loss
from ideotrace.optim import (
    AdamConfig,
    adam_step,
    configs_from_mapping,
    cross_validate,
    cv_masks,
    fit,
    init_state,
    read_config,
    read_grid,
    train,
)


def scalar_adam(theta, grads, lr, b1, b2, eps):
    """Reference Adam on a scalar parameter with a precomputed gradient sequence."""
    m = v = 0.0
    out = []
    for k, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**k)) / (math.sqrt(v / (1 - b2**k)) + eps)
        out.append(theta)
    return out


class TestAdamStep:
    def test_matches_scalar_reference(self):
        cfg = AdamConfig(learning_rate=0.05, beta1=0.8, beta2=0.95, epsilon=1e-6)
        grads = [0.3, -1.2, 2.0, 0.0, 5e-3]
        expected = scalar_adam(1.5, grads, 0.05, 0.8, 0.95, 1e-6)
        params, moments = {"x": np.array(1.5)}, {}
        for k, g in enumerate(grads, start=1):
            params, moments = adam_step(params, {"x": np.array(g)}, moments, k, cfg)
            assert float(params["x"]) == pytest.approx(expected[k - 1], rel=1e-14)

    def test_first_step_moves_by_learning_rate(self):
        cfg = AdamConfig(learning_rate=0.01)
        params, _ = adam_step({"x": np.array([1.0, 2.0])}, {"x": np.array([3.0, -0.5])}, {}, 1, cfg)
        np.testing.assert_allclose(params["x"], [0.99, 2.01], rtol=1e-7)

    def test_inputs_untouched(self):
        x = np.array([1.0])
        adam_step({"x": x}, {"x": np.array([1.0])}, {}, 1, AdamConfig())
        assert x[0] == 1.0

    def test_non_finite_gradient(self):
        with pytest.raises(DivergedError, match="diverged gradient"):
            adam_step({"x": np.zeros(2)}, {"x": np.array([np.inf, 0])}, {}, 1, AdamConfig())

    @pytest.mark.parametrize("kw", [dict(beta1=1.0), dict(beta2=0.0), dict(learning_rate=0), dict(patience=0), dict(max_epochs=-1)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            AdamConfig(**kw)


class TestInit:
    def test_shapes_and_scale(self):
        s = init_state((40, 50, 3, 2), seed=1)
        assert s.W.shape == (40, 3) and s.C.shape == (3, 50, 3)
        assert np.all(s.mu == 0) and np.all(s.nu == 0)
        assert np.std(np.concatenate([s.W.ravel(), s.C.ravel()])) == pytest.approx(0.1, rel=0.1)

    def test_shared_users_matches_first_bin(self):
        a = init_state((4, 5, 2, 0), seed=9)
        b = init_state((4, 5, 2, 3), seed=9, shared_users=True)
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.C, b.C)

    def test_deterministic(self):
        assert init_state((3, 3, 2, 1), 5).checksum() == init_state((3, 3, 2, 1), 5).checksum()


class TestTrain:
    def test_monotone_overall_and_trace(self, rng):
        _, obs, graph, hp = random_instance(rng, 6, 5, 2, 2)
        report = train(obs, graph, hp, AdamConfig(max_epochs=300, learning_rate=0.02))
        trace = report.loss_trace
        assert trace[-1] <= trace[0]
        assert len(trace) == report.epochs_run + 1
        assert report.final_loss.total == trace[-1]
        assert loss(report.final_state, obs, graph, hp).total == pytest.approx(trace[-1], rel=1e-12)

    def test_zero_epochs_returns_initial_state(self, rng):
        _, obs, graph, hp = random_instance(rng, 3, 3, 2, 1)
        init = init_state((3, 3, 2, 1), 4)
        report = train(obs, graph, hp, AdamConfig(max_epochs=0), init=init)
        assert report.final_state.checksum() == init.checksum()
        assert report.epochs_run == 0 and not report.converged
        assert report.loss_trace == [loss(init, obs, graph, hp).total]

    def test_converges_and_stops_early(self, rng):
        _, obs, graph, hp = random_instance(rng, 4, 4, 2, 1)
        report = train(obs, graph, hp, AdamConfig(max_epochs=20000, learning_rate=0.05, tolerance=1e-7))
        assert report.converged
        assert report.epochs_run < 20000

    def test_frozen_parameters(self, rng):
        _, obs, graph, hp = random_instance(rng, 3, 4, 2, 1)
        init = init_state((3, 4, 2, 1), 2)
        report = train(obs, graph, hp, AdamConfig(max_epochs=50), init=init, frozen=("W", "mu"))
        np.testing.assert_array_equal(report.final_state.W, init.W)
        np.testing.assert_array_equal(report.final_state.mu, init.mu)
        assert not np.array_equal(report.final_state.C, init.C)

    def test_deterministic(self, rng):
        _, obs, graph, hp = random_instance(rng, 4, 4, 2, 1)
        a = train(obs, graph, hp, AdamConfig(max_epochs=100, seed=3))
        b = train(obs, graph, hp, AdamConfig(max_epochs=100, seed=3))
        assert a.final_state.checksum() == b.final_state.checksum()
        assert a.trace_text() == b.trace_text()

    def test_divergence_carries_last_good_state(self):
        calls = []

        def objective(s):
            calls.append(1)
            value = 1.0 if len(calls) < 4 else math.nan
            zeros = ModelState(np.zeros_like(s.W), np.zeros_like(s.C), np.ones_like(s.mu), np.zeros_like(s.nu))
            return LossBreakdown(value, value, 0, 0, 0, 0), zeros

        with pytest.raises(DivergedError) as err:
            fit(init_state((2, 2, 1, 0), 0), objective, AdamConfig(max_epochs=10))
        good = err.value.state
        assert good is not None and good.is_finite()
        # three successful evaluations, so two updates reached the last good state
        np.testing.assert_allclose(good.mu, -0.02, rtol=1e-6)

    def test_huge_learning_rate_diverges(self):
        Y = np.ones((1, 2, 2))
        obs = TimeBinnedObservations.from_dense(Y)
        hp = Hyperparameters(K=1, beta=2, gamma=0, lam=0, tau=0)
        init = ModelState(np.full((2, 1), 1e154), np.full((1, 2, 1), 1e154), np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(DivergedError):
            train(obs, None, hp, AdamConfig(max_epochs=5, learning_rate=1e300), init=init)

    def test_graph_size_mismatch(self, rng):
        _, obs, _, hp = random_instance(rng, 3, 4, 2, 0)
        with pytest.raises(ValueError):
            train(obs, SocialGraph.from_pairs(5, []), hp, AdamConfig(max_epochs=1))


class TestCrossValidation:
    def test_masks_cover_positives_once(self, rng):
        _, obs, _, _ = random_instance(rng, 6, 6, 2, 1)
        masks = cv_masks(obs, 3, seed=0)
        Y = obs.dense.ravel()
        pos = np.concatenate([c[l > 0] for c, l in masks])
        assert sorted(pos) == sorted(np.flatnonzero(Y))
        for cells, labels in masks:
            np.testing.assert_array_equal(Y[cells], labels)
            assert (labels == 0).sum() == (labels == 1).sum()

    def test_too_sparse(self):
        obs = TimeBinnedObservations.from_dense(np.eye(2)[None].repeat(1, axis=0))
        with pytest.raises(ValueError, match="fold too sparse"):
            cv_masks(obs, 3, seed=0)

    def test_selects_best_and_breaks_ties(self, rng):
        _, obs, graph, _ = random_instance(rng, 5, 5, 2, 1, density=0.4)
        grid = [Hyperparameters(gamma=0.5), Hyperparameters(gamma=0.1), Hyperparameters(gamma=0.1)]
        res = cross_validate(obs, graph, grid, folds=2, seed=0, adam=AdamConfig(max_epochs=30))
        assert len(res.scores) == 3
        best_score = max(s for _, s, _ in res.scores)
        winners = [hp for hp, s, _ in res.scores if s == best_score]
        assert res.best in winners
        assert res.best.key() == min(hp.key() for hp in winners)
        # identical cells score identically
        assert res.scores[1][1] == res.scores[2][1]

    def test_empty_grid(self, rng):
        _, obs, graph, _ = random_instance(rng, 3, 3, 2, 0)
        with pytest.raises(ValueError):
            cross_validate(obs, graph, [], folds=2, seed=0)


class TestConfigFiles:
    def test_read_and_overlay(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# comment\nK=3\nlambda = 0.5\nlearning-rate=0.02\nmax_epochs=7\nunused=1\n")
        hp, adam = configs_from_mapping(read_config(tmp_path / "c.cfg"))
        assert hp.K == 3 and hp.lam == 0.5
        assert adam.learning_rate == 0.02 and adam.max_epochs == 7

    def test_bad_line(self, tmp_path):
        (tmp_path / "c.cfg").write_text("K=2\nnonsense\n")
        with pytest.raises(DataFormatError) as err:
            read_config(tmp_path / "c.cfg")
        assert err.value.lineno == 2

    def test_grid(self, tmp_path):
        (tmp_path / "g.txt").write_text("gamma=0.1 tau=1\n\ngamma=1 lambda=0\n")
        grid = read_grid(tmp_path / "g.txt", Hyperparameters(beta=3))
        assert [(h.gamma, h.tau, h.lam, h.beta) for h in grid] == [(0.1, 1.0, 0.01, 3), (1.0, 0.1, 0.0, 3)]

    def test_grid_bad_value(self, tmp_path):
        (tmp_path / "g.txt").write_text("gamma=abc\n")
        with pytest.raises(DataFormatError):
            read_grid(tmp_path / "g.txt", Hyperparameters())
