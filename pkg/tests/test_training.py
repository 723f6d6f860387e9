import numpy as np
import pytest

from dualshot_app.errors import InputError
from dualshot_app.geometry import Box, iou
from dualshot_app.services.augment import Sample
from dualshot_app.services.corpus import synth_corpus
from dualshot_app.services.network import NetConfig, build, predict
from dualshot_app.services.training import SGD, TrainConfig, batch_loss, train, train_step
from dualshot_app.tensor import Tensor


def _toy_samples(n, seed=0):
    return synth_corpus(n, faces_per_image=(1, 2), scale_range=(16.0, 64.0), seed=seed, input_size=160)


class TestTrainConfig:

    def test_constant_schedule(self):
        cfg = TrainConfig(lr=0.01)
        assert cfg.lr_at(0) == cfg.lr_at(100_000) == 0.01

    def test_long_schedule_drops_by_decades(self):
        cfg = TrainConfig.long_run()
        assert cfg.lr_at(0) == pytest.approx(1e-3)
        assert cfg.lr_at(39_999) == pytest.approx(1e-3)
        assert cfg.lr_at(40_000) == pytest.approx(1e-4)
        assert cfg.lr_at(50_000) == pytest.approx(1e-5)
        assert cfg.steps == 60_000 and cfg.batch == 16

    def test_warmup_ramps_linearly_to_the_base_rate(self):
        cfg = TrainConfig(lr=0.02, warmup_steps=100, warmup_ratio=0.1)
        assert cfg.lr_at(0) == pytest.approx(0.002)
        assert cfg.lr_at(50) == pytest.approx(0.011)
        assert cfg.lr_at(100) == cfg.lr_at(400) == 0.02

    def test_toy_run_preset(self):
        cfg = TrainConfig.toy_run(batch=1)
        assert cfg.batch == 1 and cfg.steps == 500
        assert cfg.warmup_steps > 0 and cfg.clip_norm > 0
        assert cfg.lr_at(0) < cfg.lr_at(cfg.warmup_steps) == cfg.lr

    def test_warmup_scales_the_long_schedule(self):
        cfg = TrainConfig.long_run(warmup_steps=10, warmup_ratio=0.5)
        assert cfg.lr_at(0) == pytest.approx(5e-4)
        assert cfg.lr_at(40_000) == pytest.approx(1e-4)

    @pytest.mark.parametrize("kwargs", [
        {"lr_schedule": "cosine"},
        {"lr": -1.0},
        {"momentum": 1.0},
        {"batch": 0},
        {"beta": 0.0},
        {"lam": -0.5},
        {"neg_pos_ratio": 0.0},
        {"warmup_steps": -1},
        {"warmup_ratio": 0.0},
        {"clip_norm": -1.0},
    ])
    def test_rejects_bad_settings(self, kwargs):
        with pytest.raises(InputError):
            TrainConfig(**kwargs)


class TestSGD:

    def test_weight_decay_alone_shrinks_the_norm(self):
        weight = Tensor(np.ones(3))
        SGD({"w": weight}, momentum=0.0, weight_decay=0.1).step(0.5)
        np.testing.assert_allclose(weight.data, np.full(3, 0.95))

    def test_momentum_accumulates(self):
        weight = Tensor(np.zeros(2))
        weight.grad = np.ones(2)
        opt = SGD({"w": weight}, momentum=0.9, weight_decay=0.0)
        opt.step(0.1)
        np.testing.assert_allclose(weight.data, [-0.1, -0.1])
        opt.step(0.1)
        np.testing.assert_allclose(weight.data, [-0.29, -0.29])

    def test_clipping_rescales_to_the_global_norm(self):
        a, b = Tensor(np.zeros(1)), Tensor(np.zeros(1))
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        opt = SGD({"a": a, "b": b}, momentum=0.0, weight_decay=0.0)
        assert opt.grad_norm() == pytest.approx(5.0)
        opt.step(1.0, clip_norm=1.0)
        np.testing.assert_allclose([a.data[0], b.data[0]], [-0.6, -0.8])

    def test_clipping_leaves_small_gradients_alone(self):
        weight = Tensor(np.zeros(2))
        weight.grad = np.array([0.3, 0.4])
        SGD({"w": weight}, momentum=0.0, weight_decay=0.0).step(1.0, clip_norm=1.0)
        np.testing.assert_allclose(weight.data, [-0.3, -0.4])

    def test_weight_decay_is_not_clipped(self):
        weight = Tensor(np.ones(1))
        weight.grad = np.array([10.0])
        SGD({"w": weight}, momentum=0.0, weight_decay=0.5).step(0.1, clip_norm=1.0)
        np.testing.assert_allclose(weight.data, [1.0 - 0.1 * (1.0 + 0.5)])


class TestBatchLoss:

    def test_batch_is_the_mean_of_images(self, toy_net_config):
        net = build(toy_net_config)
        samples = _toy_samples(2)
        cfg = TrainConfig()
        both = batch_loss(net, samples, cfg)[0].item()
        singles = [batch_loss(net, [s], cfg)[0].item() for s in samples]
        assert both == pytest.approx(sum(singles) / 2, rel=1e-9)

    def test_progressive_loss_adds_both_shots(self, toy_net_config):
        net = build(toy_net_config)
        samples = _toy_samples(1)
        loss, first, second = batch_loss(net, samples, TrainConfig(lam=1.0))
        assert loss.item() == pytest.approx(first.total_shot + second.total_shot, rel=1e-9)
        only_second = batch_loss(net, samples, TrainConfig(use_pal=False))[0]
        assert only_second.item() == pytest.approx(second.total_shot, rel=1e-9)

    def test_needs_pixels_and_samples(self, toy_net_config):
        net = build(toy_net_config)
        with pytest.raises(InputError):
            batch_loss(net, [], TrainConfig())
        bare = Sample(np.array([[10.0, 10.0, 20.0, 30.0]]), 160, 160)
        with pytest.raises(InputError):
            batch_loss(net, [bare], TrainConfig())


class TestTrain:

    def test_zero_lr_repeats_the_loss(self, toy_net_config):
        net = build(toy_net_config)
        history = train(net, _toy_samples(1), TrainConfig(lr=0.0, batch=1, steps=2))
        assert len(history.losses) == 2
        assert history.losses[0] == history.losses[1]

    def test_step_report_carries_both_shots(self, toy_net_config):
        net = build(toy_net_config)
        cfg = TrainConfig(batch=1)
        report = train_step(net, _toy_samples(1), cfg, SGD(net.parameters(), cfg.momentum, cfg.weight_decay))
        first, second = report.per_shot
        assert report.pal_total == report.total_shot
        assert report.total_shot == pytest.approx(first.total_shot + second.total_shot, rel=1e-9)
        assert report.n_pos == first.n_pos + second.n_pos

    def test_callback_sees_every_step(self, toy_net_config):
        seen = []
        train(build(toy_net_config), _toy_samples(2), TrainConfig(batch=1, steps=3),
              on_step=lambda step, report: seen.append(step))
        assert seen == [0, 1, 2]

    def test_no_samples(self, toy_net_config):
        with pytest.raises(InputError):
            train(build(toy_net_config), [], TrainConfig(steps=1))


@pytest.mark.slow
def test_overfits_a_single_image():
    sample = synth_corpus(1, faces_per_image=(1, 1), scale_range=(40.0, 40.0), seed=3, input_size=160)[0]
    net = build(NetConfig.toy(seed=7))
    history = train(net, [sample], TrainConfig.toy_run(batch=1, log_every=100))
    assert history.final <= 0.1 * history.initial
    top = predict(net, sample.image[None])[0]
    assert iou(top.box, Box(*sample.faces[0])) >= 0.7
