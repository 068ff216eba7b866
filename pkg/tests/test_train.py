import math

import numpy as np
import pytest

from camboost.boostlu import BoostParams
from camboost.data import Dataset, SyntheticSpec, generate_dataset
from camboost.errors import ConfigError, TrainingDivergedError
from camboost.large_loss import LLConfig, LLPolicy
from camboost.network import CamNet, NetConfig, checkpoint_bytes, init_net
from camboost.tensor import Tensor
from camboost.train import Adam, TrainConfig, train, write_history


def tiny_data(seed=0, n=40):
    spec = SyntheticSpec(num_samples=n, height=8, width=8, blob_min=2, blob_max=3, jitter=1,
                         num_classes=3, max_positives=2, noise=0.2, seed=seed)
    return generate_dataset(spec)


def tiny_net(seed=0):
    return init_net(NetConfig(height=8, width=8, channels=(3,), num_classes=3), seed)


def weights(net):
    return [p.data.copy() for p in net.parameters()]


def scalar_problem(x, w0):
    """One learnable scalar: logit = w·x over a 1×1 image, one class, all positive."""
    n = len(x)
    ds = Dataset(np.asarray(x, float).reshape(n, 1, 1, 1), np.ones((n, 1), np.uint8),
                 np.ones((n, 1), np.int8))
    net = CamNet([], Tensor(np.array([[w0]]), True), None, (1, 1, 1))
    return ds, net


def test_zero_epochs_leaves_weights():
    net = tiny_net()
    before = weights(net)
    res = train(net, tiny_data(), TrainConfig(epochs=0))
    for a, b in zip(before, weights(net)):
        assert np.array_equal(a, b)
    assert res.history == [] and res.best_plain.epoch == 0


def test_single_scalar_adam_steps():
    x = np.array([0.5, -1.5, 2.0, 1.0])
    w0, lr = 0.3, 1e-2
    ds, net = scalar_problem(x, w0)
    train(net, ds, TrainConfig(epochs=2, batch_size=4, lr=lr, val_fraction=0.0))

    # hand-unrolled Adam on L(w) = mean softplus(-w x), head learning rate x10
    b1, b2, eps = 0.9, 0.999, 1e-8
    w, m, v = w0, 0.0, 0.0
    for t in (1, 2):
        g = np.mean([-xi / (1 + math.exp(w * xi)) for xi in x])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= 10 * lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        if t == 1:
            # closed form of the first step: the update is the sign of the gradient
            assert w == pytest.approx(w0 - 10 * lr * g / (abs(g) + eps), rel=1e-14)
    assert net.head_weight.data[0, 0] == pytest.approx(w, rel=1e-12)


def test_adam_skips_parameters_without_grad():
    p = Tensor(np.ones(2), True)
    opt = Adam([(p, 0.1)])
    opt.step()
    assert np.array_equal(p.data, np.ones(2))


def test_same_seed_bitwise_identical(tmp_path):
    ds = tiny_data()
    cfg = TrainConfig(epochs=2, batch_size=8, seed=4, ll=LLConfig(LLPolicy.CORRECT_PERM, 20.0))
    a, b = tiny_net(1), tiny_net(1)
    ra, rb = train(a, ds, cfg), train(b, ds, cfg)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    write_history(tmp_path / "a.csv", ra.history)
    write_history(tmp_path / "b.csv", rb.history)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_shuffle_seed_matters():
    ds = tiny_data()
    a, b = tiny_net(1), tiny_net(1)
    train(a, ds, TrainConfig(epochs=1, batch_size=8, seed=0))
    train(b, ds, TrainConfig(epochs=1, batch_size=8, seed=1))
    assert checkpoint_bytes(a) != checkpoint_bytes(b)


def test_alpha_one_training_is_plain_training():
    ds = tiny_data()
    a, b = tiny_net(2), tiny_net(2)
    ra = train(a, ds, TrainConfig(epochs=2, batch_size=8))
    rb = train(b, ds, TrainConfig(epochs=2, batch_size=8, boost_train=BoostParams(1.0, 0.0)))
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert [h.train_loss for h in ra.history] == [h.train_loss for h in rb.history]


@pytest.mark.parametrize("delta", [0.0, 1e-6])
def test_reject_at_rate_zero_is_plain_training(delta):
    # delta 1e-6 makes the rate positive but selects no term in any batch
    ds = tiny_data()
    a, b = tiny_net(3), tiny_net(3)
    train(a, ds, TrainConfig(epochs=3, batch_size=8))
    rb = train(b, ds, TrainConfig(epochs=3, batch_size=8, ll=LLConfig(LLPolicy.REJECT, delta)))
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert sum(h.ll_modified for h in rb.history) == 0


def test_boost_in_training_changes_updates():
    ds = tiny_data()
    a, b = tiny_net(2), tiny_net(2)
    train(a, ds, TrainConfig(epochs=1, batch_size=8))
    train(b, ds, TrainConfig(epochs=1, batch_size=8, boost_train=BoostParams(5.0)))
    assert checkpoint_bytes(a) != checkpoint_bytes(b)


def test_large_loss_counters_add_up():
    ds = tiny_data(n=60)
    res = train(tiny_net(), ds, TrainConfig(epochs=4, batch_size=16,
                                            ll=LLConfig(LLPolicy.REJECT, 30.0)))
    assert res.history[0].ll_modified == 0  # warmup epoch
    assert sum(h.ll_modified for h in res.history) > 0
    for h in res.history:
        assert h.ll_fn_hits + h.ll_tn_hits == h.ll_modified
    assert [e.terms_modified for e in res.ll_state.epochs] == [h.ll_modified for h in res.history]


def test_permanent_correction_accumulates():
    ds = tiny_data(n=60)
    res = train(tiny_net(), ds, TrainConfig(epochs=4, batch_size=16,
                                            ll=LLConfig(LLPolicy.CORRECT_PERM, 30.0)))
    flips = res.ll_state.permanent_flips
    assert len(flips) > 0
    train_ids = set(range(48))
    assert all(sid in train_ids for sid, _ in flips)


def test_full_label_mode_uses_truth():
    ds = tiny_data()
    a, b = tiny_net(), tiny_net()
    train(a, ds, TrainConfig(epochs=1, batch_size=8, full_labels=True))
    train(b, ds.with_full_observed(), TrainConfig(epochs=1, batch_size=8))
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_selection_tracks_best_validation():
    res = train(tiny_net(), tiny_data(n=60), TrainConfig(epochs=3, batch_size=8,
                                                         boost_infer=BoostParams()))
    vals = [h.val_map for h in res.history]
    assert res.best_plain.val_map == max([res.best_plain.val_map] + vals)
    assert res.best_boost is not None
    assert res.model is res.best_boost.net


def test_divergence_is_reported():
    ds = tiny_data()
    ds.images[3, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(tiny_net(), ds, TrainConfig(epochs=1, batch_size=8))
    assert info.value.epoch == 1


@pytest.mark.parametrize("kw", [{"epochs": -1}, {"lr": 0.0}, {"head_lr_mult": -1.0},
                                {"batch_size": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)
