import numpy as np
import pytest

from bevpredict.ai.network import build_network, forward
from bevpredict.ai.train_model import (
    OptimizerState,
    SampleDataset,
    Trainer,
    backward,
    clip_gradients,
    global_norm,
    loss_and_gradients,
    mse_loss,
    sgd_momentum_step,
    train,
)
from bevpredict.models import GridSpec, HeadType, LossReduction, NetSpec, SampleStack, TrainConfig
from bevpredict.services.metrics_collector import MetricsCollector
from bevpredict.services.rasterizer import valid_sample_indices
from bevpredict.utils.errors import InvalidArgumentError, ShapeError

SMALL = GridSpec(width=8, height=4)


def _sample(inputs, targets, spec=SMALL):
    return SampleStack(spec=spec, inputs=np.asarray(inputs, dtype=np.float64),
                       targets=np.asarray(targets, dtype=np.float64), dt_s=0.2)


def _random_sample(seed=0, channels=2, spec=SMALL):
    rng = np.random.default_rng(seed)
    shape = (channels,) + spec.shape
    return _sample(rng.random(shape), rng.random(shape), spec)


class TestMse:
    def test_examples(self):
        assert mse_loss(np.zeros(4), np.zeros(4)) == 0.0
        assert mse_loss(np.ones(4), np.zeros(4)) == 1.0
        assert mse_loss(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(4)) == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 4)), np.zeros((4, 2)))


class TestBackward:
    @pytest.mark.parametrize("head", list(HeadType))
    def test_matches_finite_differences(self, make_net, head):
        net = make_net(head)
        # Zero biases leave pre-activations exactly on the ReLU kink
        bias_rng = np.random.default_rng(7)
        for name, param in net.params.items():
            if name.endswith(".bias"):
                param[...] = bias_rng.uniform(0.05, 0.3, size=param.shape)
        sample = _random_sample(1)
        grads = backward(net, sample)

        def loss():
            return mse_loss(net.run(sample.inputs), sample.targets)

        eps = 1e-6
        rng = np.random.default_rng(2)
        for name, param in net.params.items():
            flat = param.reshape(-1)
            picks = np.unique(np.concatenate([np.arange(min(3, flat.size)),
                                              rng.integers(flat.size, size=4)]))
            analytic = grads[name].reshape(-1)[picks]
            numeric = np.empty(len(picks))
            for j, i in enumerate(picks):
                orig = flat[i]
                flat[i] = orig + eps
                plus = loss()
                flat[i] = orig - eps
                minus = loss()
                flat[i] = orig
                numeric[j] = (plus - minus) / (2 * eps)
            err = np.linalg.norm(analytic - numeric) / max(
                np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
            assert err < 1e-4, name

    def test_gradient_covers_every_parameter(self, toy_net64):
        grads = backward(toy_net64, _random_sample(0))
        assert list(grads) == list(toy_net64.params)
        for name, g in grads.items():
            assert g.shape == toy_net64.params[name].shape

    def test_half_sum_scales_the_mse_gradient(self, toy_net64):
        sample = _random_sample(4)
        mean_loss, mean_grads = loss_and_gradients(toy_net64, sample)
        sum_loss, sum_grads = loss_and_gradients(toy_net64, sample, LossReduction.HALF_SUM)
        assert sum_loss == mean_loss
        n = sample.targets.size
        for name, g in mean_grads.items():
            np.testing.assert_allclose(sum_grads[name], g * n / 2, rtol=1e-9, atol=1e-15)

    def test_zero_when_prediction_equals_target(self, toy_net64):
        inputs = np.random.default_rng(3).random((2,) + SMALL.shape)
        sample = _sample(inputs, forward(toy_net64, inputs))
        for g in backward(toy_net64, sample).values():
            assert not g.any()


class TestClipping:
    def test_small_norm_unchanged(self):
        grads = {"a": np.array([0.3, 0.4])}
        clipped = clip_gradients(grads, 1.0)
        np.testing.assert_array_equal(clipped["a"], grads["a"])

    def test_large_norm_scaled_to_threshold(self):
        grads = {"a": np.array([2.4, 0.0]), "b": np.array([[3.2]])}
        clipped = clip_gradients(grads, 1.0)
        assert global_norm(grads) == pytest.approx(4.0)
        assert global_norm(clipped) == pytest.approx(1.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
        np.testing.assert_allclose(clipped["b"], [[0.8]])

    def test_idempotent(self):
        grads = {"a": np.array([3.0, 4.0])}
        once = clip_gradients(grads, 1.0)
        twice = clip_gradients(once, 1.0)
        np.testing.assert_allclose(once["a"], twice["a"])

    def test_threshold_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            clip_gradients({"a": np.ones(2)}, 0.0)


class TestMomentum:
    def test_plain_gradient_step(self, toy_net64):
        before = {k: v.copy() for k, v in toy_net64.params.items()}
        grads = {k: np.ones_like(v) for k, v in before.items()}
        cfg = TrainConfig(lr=0.1, momentum=0.0)
        sgd_momentum_step(toy_net64, grads, cfg, OptimizerState.zeros_like(toy_net64))
        for name, p in toy_net64.params.items():
            np.testing.assert_allclose(p, before[name] - 0.1)

    def test_two_steps_accumulate_velocity(self, toy_net64):
        before = {k: v.copy() for k, v in toy_net64.params.items()}
        grads = {k: np.full_like(v, 0.5) for k, v in before.items()}
        cfg = TrainConfig(lr=1.0, momentum=0.9)
        state = OptimizerState.zeros_like(toy_net64)
        sgd_momentum_step(toy_net64, grads, cfg, state)
        sgd_momentum_step(toy_net64, grads, cfg, state)
        assert state.iteration == 2
        for name, p in toy_net64.params.items():
            np.testing.assert_allclose(p, before[name] - 2.9 * 0.5)

    def test_zero_gradient_with_zero_velocity_is_a_no_op(self, toy_net64):
        before = {k: v.copy() for k, v in toy_net64.params.items()}
        grads = {k: np.zeros_like(v) for k, v in before.items()}
        sgd_momentum_step(toy_net64, grads, TrainConfig(), OptimizerState.zeros_like(toy_net64))
        for name, p in toy_net64.params.items():
            np.testing.assert_array_equal(p, before[name])


class TestTraining:
    def test_one_sample_one_epoch_is_one_step(self, toy_spec):
        ckpt = train([_random_sample(0)], TrainConfig(lr=1e-3), toy_spec)
        assert ckpt.iteration == 1

    def test_empty_dataset(self, toy_spec):
        with pytest.raises(InvalidArgumentError):
            train([], TrainConfig(), toy_spec)

    def test_max_steps_stops_early(self, toy_spec):
        samples = [_random_sample(i) for i in range(5)]
        ckpt = train(samples, TrainConfig(lr=1e-3, epochs=3, max_steps=7), toy_spec)
        assert ckpt.iteration == 7

    def test_same_seed_same_checkpoint(self, toy_spec):
        samples = [_random_sample(i) for i in range(4)]
        cfg = TrainConfig(lr=1e-2, epochs=2, seed=5)
        assert train(samples, cfg, toy_spec).identical_to(train(samples, cfg, toy_spec))

    def test_small_steps_never_increase_the_loss(self, toy_spec):
        net = build_network(toy_spec, seed=4, dtype=np.float64)
        trainer = Trainer(net, TrainConfig(lr=1e-3, momentum=0.0))
        sample = _random_sample(2)
        losses = [trainer.step(sample).loss for _ in range(100)]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_converges_on_a_constant_target(self):
        spec = NetSpec(depth=1, base_features=2, in_channels=1, out_channels=1)
        grid = GridSpec(width=4, height=4)
        sample = _sample(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.25), grid)
        trainer = Trainer(build_network(spec, seed=0, dtype=np.float64),
                          TrainConfig(lr=0.05, momentum=0.9))
        for _ in range(500):
            record = trainer.step(sample)
        assert record.loss < 1e-4

    def test_half_sum_step_is_clipped_to_the_threshold(self, toy_spec):
        sample = _random_sample(5)
        net = build_network(toy_spec, seed=4, dtype=np.float64)
        before = {name: p.copy() for name, p in net.params.items()}
        cfg = TrainConfig(lr=1e-2, momentum=0.0, loss_reduction=LossReduction.HALF_SUM)
        _, grads = loss_and_gradients(net, sample, LossReduction.HALF_SUM)
        assert global_norm(grads) > cfg.grad_threshold

        Trainer(net, cfg).step(sample)
        moved = {name: before[name] - p for name, p in net.params.items()}
        assert global_norm(moved) == pytest.approx(cfg.lr * cfg.grad_threshold)

    def test_loss_log_and_running_loss(self, toy_spec):
        trainer = Trainer(build_network(toy_spec), TrainConfig(lr=1e-3))
        for i in range(3):
            trainer.step(_random_sample(i))
        log = trainer.loss_log()
        assert list(log.columns) == ["step", "loss", "running_loss"]
        assert list(log["step"]) == [1, 2, 3]
        assert log["running_loss"][0] == log["loss"][0]
        assert log["running_loss"][1] == pytest.approx(0.9 * log["loss"][0] + 0.1 * log["loss"][1])

    def test_metrics_follow_the_steps(self, toy_spec):
        metrics = MetricsCollector()
        trainer = Trainer(build_network(toy_spec), TrainConfig(lr=1e-3, grad_threshold=1e-9),
                          metrics=metrics)
        for i in range(4):
            trainer.step(_random_sample(i))
        assert metrics.value("bevpredict_train_steps_total") == 4.0
        assert metrics.value("bevpredict_train_clipped_steps_total") == 4.0
        assert metrics.value("bevpredict_train_loss") == pytest.approx(trainer.history[-1].loss)

    def test_resume_continues_the_iteration_count(self, toy_spec):
        samples = [_random_sample(i) for i in range(3)]
        first = train(samples, TrainConfig(lr=1e-3, max_steps=2), toy_spec)
        assert first.iteration == 2
        resumed = train(samples, TrainConfig(lr=1e-3, max_steps=1), resume=first)
        assert resumed.iteration == 3
        assert resumed.spec == first.spec
        assert set(resumed.velocity) == set(first.params)


def test_sample_dataset_is_lazy_over_valid_indices(cv_scene):
    spec = GridSpec(width=128, height=16)
    dataset = SampleDataset([cv_scene, cv_scene], d=3, spec=spec)
    assert len(dataset) == 2 * len(valid_sample_indices(cv_scene, 3))
    sample = dataset[0]
    assert sample.t == 2
    assert sample.inputs.shape == (3, 16, 128)
