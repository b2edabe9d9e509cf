#!/usr/bin/env python3
"""
Tests for the MLP engine: forward pass, loss, gradients, SGD and noise injection
"""

import math

import numpy as np
import pytest

from src.errors import ConfigError, ContractError, DimensionError, DomainError, NonFiniteGradientError, ParameterError
from src.matrixio import LabeledDataset
from src.nn_core import (DenseLayer, MLPModel, SGDState, TrainConfig, accuracy, backward_and_step,
                         classification_confidence, compute_gradients, cross_entropy, forward, forward_batch,
                         init_mlp, inject_noise, loss, lr_at, model_from_checkpoint, model_to_checkpoint, objective,
                         stable_rank, train)

from conftest import make_blobs


def random_data(n=40, dim=6, n_classes=3, seed=0):
    gen = np.random.default_rng(seed)
    return LabeledDataset(gen.standard_normal((n, dim)), gen.integers(0, n_classes, n), n_classes)


def numeric_gradient(fn, W, h=1e-5):
    grad = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        original = W[idx]
        W[idx] = original + h
        up = fn()
        W[idx] = original - h
        down = fn()
        W[idx] = original
        grad[idx] = (up - down) / (2 * h)
    return grad


class TestModel:
    def test_topology_and_counts(self):
        model = init_mlp([784, 16, 10], activation="abs", seed=1)
        assert model.topology == [784, 16, 10]
        assert model.param_count() == 784 * 16 + 16 * 10
        assert model.nnz() == model.param_count()

    def test_chain_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            MLPModel([DenseLayer(weight=np.ones((4, 3))), DenseLayer(weight=np.ones((2, 5)))])

    def test_mask_must_be_binary(self):
        with pytest.raises(ContractError):
            MLPModel([DenseLayer(weight=np.ones((2, 2)), mask=np.full((2, 2), 0.5))])

    def test_split_layer_shape(self):
        layer = DenseLayer(left=np.ones((16, 4)), right=np.ones((4, 16)))
        assert layer.split
        assert layer.shape == (16, 16)
        assert layer.param_count() == 128

    def test_checkpoint_conversion(self, rng):
        model = init_mlp([8, 6, 3], seed=2)
        model.layers[0] = DenseLayer(bias=np.arange(6.0), left=rng.standard_normal((6, 2)),
                                     right=rng.standard_normal((2, 8)))
        model.layers[1].mask = (rng.random((3, 6)) > 0.5).astype(float)
        model.layers[1].apply_mask()
        back = model_from_checkpoint(model_to_checkpoint(model))
        assert back.layers[0].split
        assert np.array_equal(back.layers[0].effective_weight(), model.layers[0].effective_weight())
        assert np.array_equal(back.layers[1].mask, model.layers[1].mask)
        assert np.array_equal(back.layers[0].bias, np.arange(6.0))


class TestForwardAndLoss:
    def test_uniform_predictor(self):
        model = MLPModel([DenseLayer(weight=np.zeros((10, 5)), bias=np.zeros(10))])
        data = random_data(n=20, dim=5, n_classes=10)
        assert loss(model, data, TrainConfig()).cross_entropy == pytest.approx(math.log(10), abs=1e-12)
        _, probs = forward(model, data.features[0])
        assert np.allclose(probs, 0.1)

    def test_dimension_check(self):
        model = init_mlp([4, 3])
        with pytest.raises(DimensionError):
            forward_batch(model, np.ones((2, 5)))

    def test_confidence_is_margin(self):
        model = MLPModel([DenseLayer(weight=np.diag([3.0, 1.0, 2.0]))])
        assert classification_confidence(model, np.ones(3), 0) == pytest.approx(1.0)
        assert classification_confidence(model, np.ones(3), 1) == pytest.approx(-2.0)

    def test_accuracy_empty_dataset(self):
        with pytest.raises(DomainError):
            accuracy(init_mlp([2, 2]), LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2))

    def test_accuracy_of_untrained_net_is_chance(self):
        scores = []
        for seed in range(5):
            data = random_data(n=2000, dim=20, n_classes=10, seed=100 + seed)
            scores.append(accuracy(init_mlp([20, 50, 10], seed=seed), data))
        assert np.mean(scores) == pytest.approx(0.1, abs=0.03)

    def test_penalties(self):
        model = MLPModel([DenseLayer(weight=np.array([[1.0, -2.0], [0.0, 2.0]]))])
        data = random_data(n=5, dim=2, n_classes=2)
        parts = loss(model, data, TrainConfig(mu1=0.5, mu2=0.25, stable_rank_coeff=1.0))
        assert parts.l1_term == pytest.approx(0.5 * 5.0)
        assert parts.l2_term == pytest.approx(0.25 * 9.0)
        assert parts.stable_rank_term == pytest.approx(stable_rank(model.layers[0].weight))
        assert parts.total == pytest.approx(parts.cross_entropy + parts.l1_term + parts.l2_term + parts.stable_rank_term)

    def test_stable_rank(self):
        assert stable_rank(np.eye(4)) == pytest.approx(4.0)
        assert stable_rank(np.zeros((3, 3))) == 0.0

    def test_cross_entropy_is_stable_for_large_logits(self):
        assert cross_entropy(np.array([[1000.0, 0.0]]), np.array([0])) == pytest.approx(0.0, abs=1e-12)


class TestGradients:
    def test_quadratic_penalty_gradient(self):
        model = init_mlp([5, 4], bias=False, seed=3)
        data = random_data(n=10, dim=5, n_classes=4, seed=1)
        config = TrainConfig(mu2=0.3)
        W = model.layers[0].weight
        analytic = compute_gradients(model, data.features, data.labels, config)[0]["weight"]
        numeric = numeric_gradient(lambda: loss(model, data, config).total, W)
        assert np.max(np.abs(analytic - numeric)) <= 1e-6 * max(1.0, np.max(np.abs(numeric)))

    def test_abs_network_gradient(self):
        model = init_mlp([6, 8, 8, 3], activation="abs", seed=4)
        data = random_data(n=12, dim=6, n_classes=3, seed=2)
        config = TrainConfig(mu1=0.01, mu2=0.02, stable_rank_coeff=0.05)
        grads = compute_gradients(model, data.features, data.labels, config)
        for k, layer in enumerate(model.layers):
            for name in ("weight", "bias"):
                param = getattr(layer, name)
                numeric = numeric_gradient(lambda: loss(model, data, config).total, param)
                error = np.max(np.abs(grads[k][name] - numeric)) / max(1e-8, np.max(np.abs(numeric)))
                assert error < 1e-5, f"layer {k} {name}"

    def test_split_layer_gradient(self, rng):
        model = MLPModel([DenseLayer(left=rng.standard_normal((4, 2)), right=rng.standard_normal((2, 5)),
                                     bias=np.zeros(4))], activation="abs")
        data = random_data(n=8, dim=5, n_classes=4, seed=3)
        config = TrainConfig(mu2=0.1)
        grads = compute_gradients(model, data.features, data.labels, config)[0]
        for name in ("left", "right"):
            numeric = numeric_gradient(lambda: loss(model, data, config).total, getattr(model.layers[0], name))
            assert np.allclose(grads[name], numeric, atol=1e-7)

    def test_masked_entries_get_no_gradient(self):
        model = init_mlp([4, 3], seed=5)
        model.layers[0].mask = np.ones((3, 4))
        model.layers[0].mask[0, :] = 0.0
        data = random_data(n=6, dim=4, n_classes=3)
        g = compute_gradients(model, data.features, data.labels, TrainConfig(mu2=0.1))[0]["weight"]
        assert np.all(g[0] == 0.0)

    def test_non_finite_gradient_names_layer(self):
        model = init_mlp([4, 5, 3], seed=6)
        model.layers[1].weight[0, 0] = np.nan
        data = random_data(n=6, dim=4, n_classes=3)
        with pytest.raises(NonFiniteGradientError) as info:
            compute_gradients(model, data.features, data.labels, TrainConfig())
        assert info.value.layer == 1

    def test_sgd_step_with_momentum(self):
        model = init_mlp([4, 5, 3], seed=7)
        data = random_data(n=6, dim=4, n_classes=3)
        config = TrainConfig(learning_rate=0.1, momentum=0.5)
        state = SGDState()
        before = model.layers[0].weight.copy()
        g1 = compute_gradients(model, data.features, data.labels, config)[0]["weight"]
        backward_and_step(model, data.features, data.labels, config, 0, state)
        assert np.allclose(model.layers[0].weight, before - 0.1 * g1)

        middle = model.layers[0].weight.copy()
        g2 = compute_gradients(model, data.features, data.labels, config)[0]["weight"]
        backward_and_step(model, data.features, data.labels, config, 0, state)
        assert np.allclose(model.layers[0].weight, middle - 0.1 * (0.5 * g1 + g2))


class TestTraining:
    def test_separable_blobs_reach_full_accuracy(self):
        data = make_blobs(n_per_class=50, n_classes=2, dim=2)
        model = init_mlp([2, 16, 2], seed=0)
        config = TrainConfig(learning_rate=0.05, momentum=0.9, epochs=50, batch_size=16, seed=0)
        model, log = train(model, data, config)
        assert log["train_acc"].iloc[-1] == 1.0
        assert len(log) == 50

    def test_training_is_deterministic(self):
        data = random_data(n=60, dim=5, n_classes=3)
        config = TrainConfig(learning_rate=0.1, epochs=3, batch_size=8, seed=9)
        _, log_a = train(init_mlp([5, 7, 3], seed=1), data, config)
        _, log_b = train(init_mlp([5, 7, 3], seed=1), data, config)
        assert log_a.equals(log_b)

    def test_log_columns_and_hooks(self):
        data = random_data(n=30, dim=4, n_classes=3)
        seen = []

        def hook(model, epoch, state):
            seen.append(epoch)
            return {"custom": float(epoch)} if epoch % 2 == 0 else None

        _, log = train(init_mlp([4, 6, 3]), data, TrainConfig(epochs=3, batch_size=10), hooks=[hook], eval_dataset=data)
        assert seen == [1, 2, 3]
        assert {"epoch", "lr", "cross_entropy", "total", "train_acc", "test_acc", "nnz_layer0", "nnz_layer1"} <= set(log.columns)
        assert log["custom"].isna().tolist() == [True, False, True]
        assert (log["test_acc"] == log["train_acc"]).all()

    def test_mask_survives_training(self):
        data = random_data(n=40, dim=4, n_classes=3)
        model = init_mlp([4, 6, 3], seed=2)
        model.layers[0].weight[:, 0] = 0.0
        model.freeze_masks()
        model, _ = train(model, data, TrainConfig(learning_rate=0.1, momentum=0.5, mu2=0.01, epochs=4, batch_size=8))
        assert np.all(model.layers[0].weight[:, 0] == 0.0)

    def test_zero_learning_rate_leaves_weights(self):
        data = random_data()
        model = init_mlp([6, 3], seed=3)
        before = model.layers[0].weight.copy()
        train(model, data, TrainConfig(learning_rate=0.0, epochs=2))
        assert np.array_equal(model.layers[0].weight, before)

    def test_learning_rate_schedules(self):
        step = TrainConfig(learning_rate=1.0, lr_schedule="step", step_factor=0.5, step_period=2)
        assert [lr_at(step, e) for e in range(5)] == [1.0, 1.0, 0.5, 0.5, 0.25]
        warm = TrainConfig(learning_rate=1.0, warmup_epochs=2, warmup_divisor=100)
        assert lr_at(warm, 0) == pytest.approx(0.01)
        assert lr_at(warm, 2) == 1.0
        cosine = TrainConfig(learning_rate=1.0, lr_schedule="cosine", epochs=4)
        assert lr_at(cosine, 4) == pytest.approx(0.0, abs=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_schedule="linear")
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)

    def test_objective_needs_rows(self):
        with pytest.raises(DomainError):
            objective(init_mlp([2, 2]), np.zeros((0, 2)), np.zeros(0, dtype=int), TrainConfig())


class TestNoiseInjection:
    def test_zero_noise_is_identity(self):
        model = init_mlp([5, 5, 2], seed=1)
        noisy = inject_noise(model, [0], 0.0)
        assert np.array_equal(noisy.layers[0].weight, model.layers[0].weight)
        assert noisy is not model

    def test_noise_variance(self):
        model = init_mlp([200, 200, 2], seed=1)
        noisy = inject_noise(model, [0], 0.01, seed=4)
        diff = noisy.layers[0].weight - model.layers[0].weight
        assert diff.var() == pytest.approx(0.01, rel=0.05)
        assert np.array_equal(noisy.layers[1].weight, model.layers[1].weight)

    def test_invalid_requests(self):
        model = init_mlp([4, 4, 2])
        with pytest.raises(ParameterError):
            inject_noise(model, [0], -1.0)
        model.layers[0] = DenseLayer(bias=np.zeros(4), left=np.ones((4, 1)), right=np.ones((1, 4)))
        with pytest.raises(ContractError):
            inject_noise(model, [0], 0.1)
