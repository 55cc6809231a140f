from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from scorefusion_python_sdk.scripts.core import GaussianMixture, SampleSet, SimplexWeights
from scorefusion_python_sdk.scripts.diffusion.ou_process import analytic_score
from scorefusion_python_sdk.scripts.diffusion.sampler import ReverseConfig, fused_score, reverse_sample
from scorefusion_python_sdk.scripts.diffusion.score_net import (
    DsmTrainConfig, MlpScoreNet, dsm_train, net_forward, net_gradients, time_embedding
)
from scorefusion_python_sdk.scripts.errors import (
    PoisonedModelError, RejectedInputError, TrainingDivergedError
)
from scorefusion_python_sdk.scripts.fusion_utils import make_stream


@pytest.fixture
def net(schedule):
    return MlpScoreNet.initialize(1, schedule, make_stream(21))


def test_time_embedding_at_zero():
    e = time_embedding(0.0)
    np.testing.assert_array_equal(e[:8], np.zeros(8))
    np.testing.assert_array_equal(e[8:], np.ones(8))


def test_time_embedding_norm():
    e = time_embedding(np.linspace(0.0, 5.0, 11))
    assert e.shape == (11, 16)
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), np.sqrt(8.0), rtol=1e-14)


def test_time_embedding_rejects_odd_dim():
    with pytest.raises(RejectedInputError):
        time_embedding(1.0, dim=15)


def test_time_embedding_separates_times():
    e = time_embedding(np.linspace(0.0, 5.0, 1000))
    for i in range(len(e) - 1):
        gaps = np.max(np.abs(e[i + 1:] - e[i]), axis=1)
        assert gaps.min() > 1e-8


def test_zero_parameters_give_zero_output(schedule):
    net = MlpScoreNet(1, schedule)
    out = net.evaluate(np.array([0.01, 1.0, 5.0]), np.array([[0.0], [2.0], [-3.0]]))
    np.testing.assert_array_equal(out, np.zeros((3, 1)))


def test_parameter_count(schedule):
    net = MlpScoreNet(1, schedule)
    assert net.n_params == (17 * 64 + 64) + (64 * 64 + 64) + (64 + 1)
    with pytest.raises(RejectedInputError):
        MlpScoreNet(1, schedule, params=np.zeros(3))


def test_gradients_match_finite_differences(net, rng):
    small = MlpScoreNet.initialize(1, net.schedule, make_stream(22), hidden=(8, 8), embed_dim=4)
    t = rng.uniform(0.5, 2.0, 5)
    x = rng.standard_normal((5, 1))
    target = rng.standard_normal((5, 1))
    loss, grad = net_gradients(small, t, x, target)

    h = 1e-5
    fd = np.empty(small.n_params)
    for i in range(small.n_params):
        e = np.zeros(small.n_params)
        e[i] = h
        plus, _ = net_gradients(small, t, x, target, params=small.params + e)
        minus, _ = net_gradients(small, t, x, target, params=small.params - e)
        fd[i] = (plus - minus) / (2.0 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)
    assert loss >= 0.0


def test_gradients_invariant_to_batch_duplication(net, rng):
    t = rng.uniform(0.1, 3.0, 16)
    x = rng.standard_normal((16, 1))
    target = rng.standard_normal((16, 1))
    loss, grad = net_gradients(net, t, x, target)
    loss2, grad2 = net_gradients(net, np.tile(t, 2), np.tile(x, (2, 1)), np.tile(target, (2, 1)))
    assert loss2 == pytest.approx(loss, abs=1e-12)
    np.testing.assert_allclose(grad2, grad, atol=1e-12)


def test_zero_net_zero_target_has_zero_gradient(schedule):
    net = MlpScoreNet(1, schedule)
    loss, grad = net_gradients(net, np.ones(4), np.zeros((4, 1)), np.zeros((4, 1)))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, np.zeros(net.n_params))


def test_poisoned_parameters_are_rejected(net):
    params = np.array(net.params)
    params[3] = np.nan
    poisoned = net.with_params(params)
    assert poisoned.poisoned
    with pytest.raises(PoisonedModelError):
        net_forward(poisoned, 1.0, [0.0])


def test_evaluation_is_deterministic_across_threads(net):
    x = np.linspace(-3.0, 3.0, 200).reshape(-1, 1)
    expected = net_forward(net, 0.7, x)
    with ThreadPoolExecutor(max_workers=4) as executor:
        outputs = list(executor.map(lambda _: net_forward(net, 0.7, x), range(8)))
    for out in outputs:
        np.testing.assert_array_equal(out, expected)


def test_lipschitz_bound_in_x(net, rng):
    t = 1.0
    layers = net.layers()
    inv_std = float(net._inverse_std(np.array([t]))[0])
    bound = inv_std * np.linalg.norm(layers[2][0], 2) * np.linalg.norm(layers[1][0], 2) \
        * np.linalg.norm(layers[0][0][:, :1], 2)
    x = rng.standard_normal((100, 1))
    delta = 1e-3
    change = np.abs(net_forward(net, t, x + delta) - net_forward(net, t, x))
    assert np.all(change <= bound * delta * (1.0 + 1e-9))


def test_descriptor_round_trip_is_exact(net):
    again = MlpScoreNet.from_descriptor(net.descriptor())
    np.testing.assert_array_equal(again.params, net.params)
    assert again.t_floor == net.t_floor
    assert again.hidden == net.hidden


def test_net_works_as_fused_component(short_schedule, p2):
    net = MlpScoreNet.initialize(1, short_schedule, make_stream(23))
    fused = fused_score([net, analytic_score(p2, short_schedule)], SimplexWeights([0.5, 0.5]))
    samples = reverse_sample(fused, ReverseConfig(short_schedule, n_samples=200, seed=0))
    assert samples.n == 200
    assert np.all(np.isfinite(samples.rows))


def test_training_is_reproducible(schedule, p2):
    data = p2.sample(64, make_stream(24))
    cfg = DsmTrainConfig(epochs=3, batch_size=16, seed=5)
    start = MlpScoreNet.initialize(1, schedule, make_stream(25))
    a = dsm_train(start, data, schedule, cfg)
    b = dsm_train(start, data, schedule, cfg)
    np.testing.assert_array_equal(a.net.params, b.net.params)
    assert a.train_curve == b.train_curve
    assert len(a.val_curve) == 3


def test_training_without_validation_split(schedule, p2):
    data = p2.sample(32, make_stream(26))
    result = dsm_train(MlpScoreNet.initialize(1, schedule, make_stream(27)), data, schedule,
                       DsmTrainConfig(epochs=2, val_fraction=0.0))
    assert result.val_curve == []
    assert len(result.train_curve) == 2


def test_training_reports_divergence(schedule):
    data = SampleSet([0.0, np.nan, 1.0, 2.0])
    with pytest.raises(TrainingDivergedError):
        dsm_train(MlpScoreNet.initialize(1, schedule, make_stream(28)), data, schedule,
                  DsmTrainConfig(epochs=2, batch_size=4, val_fraction=0.0))


def test_training_rejects_bad_config(schedule, p2):
    data = p2.sample(8, make_stream(0))
    with pytest.raises(RejectedInputError):
        dsm_train(MlpScoreNet(1, schedule), data, schedule, DsmTrainConfig(val_fraction=1.0))


def test_training_loss_falls_in_twenty_epoch_windows(schedule, barycenter_target):
    data = barycenter_target.sample(256, make_stream(31))
    cfg = DsmTrainConfig(epochs=300, batch_size=64, learning_rate=1e-3, val_fraction=0.2, seed=2)
    result = dsm_train(MlpScoreNet.initialize(1, schedule, make_stream(32)), data, schedule, cfg)

    windows = np.asarray(result.train_curve).reshape(-1, 20)
    means = windows.mean(axis=1)
    errors = windows.std(axis=1, ddof=1) / np.sqrt(20)
    # Epoch losses are Monte-Carlo estimates; allow 4 standard errors between windows
    for i in range(len(means) - 1):
        assert means[i + 1] <= means[i] + 4.0 * np.hypot(errors[i], errors[i + 1])
    assert means[-1] < means[0]


@pytest.mark.slow
def test_training_learns_stationary_score(schedule):
    # N(0, 1) is stationary, so the true score is -x at every t
    data = GaussianMixture.single(0.0, 1.0).sample(10_000, make_stream(29))
    cfg = DsmTrainConfig(epochs=50, batch_size=128, learning_rate=1e-3, seed=1)
    result = dsm_train(MlpScoreNet.initialize(1, schedule, make_stream(30)), data, schedule, cfg)
    x = np.linspace(-2.0, 2.0, 101).reshape(-1, 1)
    for t in (0.5, 1.0, 2.0):
        mse = np.mean((net_forward(result.net, t, x) + x) ** 2)
        assert mse < 0.05


def test_training_config_serializes(schedule):
    cfg = replace(DsmTrainConfig(), seed=3)
    assert cfg.to_dict()["seed"] == 3
    assert cfg.to_dict()["gamma_weighting"] == "sigma_squared"
