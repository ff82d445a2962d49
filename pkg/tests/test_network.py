import numpy as np
import pytest

from eckconv import checks
from eckconv.checkpoint import load_checkpoint, save_checkpoint
from eckconv.data import make_dataset, rotated_copy
from eckconv.network import NetConfig, TrainConfig, evaluate, init_params, predict, train

SMALL = dict(m=(24, 12, 4), k=(8, 8, 8), radius=(0.45, 0.7, 1.3), channels=(6, 8, 10), A=4, d=6)


@pytest.fixture(scope="module")
def data():
    train_b, test_b = make_dataset(per_class=4, seed=0, test_per_class=3, n_points=64)
    return train_b, test_b, rotated_copy(test_b, 1)


def test_zero_epochs_is_chance_level():
    _, test_b = make_dataset(per_class=0, test_per_class=40, seed=3, n_points=64)
    cfg = NetConfig.build(**SMALL)
    accs = []
    for seed in range(3):
        params, states = init_params(cfg, seed)
        accs.append(evaluate(params, states, cfg, test_b))
    # an untrained head picks classes roughly at random: no seed separates the classes
    assert all(a <= 0.6 for a in accs)
    assert abs(np.mean(accs) - 0.25) < 0.2


def test_training_is_deterministic_and_reduces_loss(data):
    train_b, _, _ = data
    cfg = NetConfig.build(**SMALL)
    tcfg = TrainConfig(epochs=3, batch_size=8, lr_max=1e-2, lr_min=1e-4)
    p1, _, h1 = train(cfg, tcfg, train_b)
    p2, _, h2 = train(cfg, tcfg, train_b)
    assert h1 == h2
    for k in p1:
        assert p1[k].tobytes() == p2[k].tobytes()
    assert h1[-1] < h1[0]


def test_checkpoint_eval_is_identical(data, tmp_path):
    train_b, test_b, rot_b = data
    cfg = NetConfig.build(**SMALL)
    params, states, _ = train(cfg, TrainConfig(epochs=1, batch_size=8, lr_max=1e-2), train_b)
    save_checkpoint(tmp_path / "m.eckc", params, states)
    p2, s2 = load_checkpoint(tmp_path / "m.eckc")
    for batch in (test_b, rot_b):
        a = predict(params, states, cfg, batch.clouds)
        b = predict(p2, s2, cfg, batch.clouds)
        assert a.tobytes() == b.tobytes()
        assert evaluate(p2, s2, cfg, batch) == evaluate(p2, s2, cfg, batch)


def test_trained_predictions_are_rotation_invariant(data):
    train_b, test_b, rot_b = data
    cfg = NetConfig.build(**SMALL)
    params, states, _ = train(cfg, TrainConfig(epochs=1, batch_size=8, lr_max=1e-2), train_b)
    a = predict(params, states, cfg, test_b.clouds)
    b = predict(params, states, cfg, rot_b.clouds)
    assert np.max(np.abs(a - b)) < 1e-8


def test_augmented_normals_network_is_invariant():
    cfg = NetConfig.build(**SMALL, normals="augment", augment_k=8)
    dev = checks.network_deviation(cfg, n_transforms=5, n_points=64)
    assert dev < 1e-6


def test_scale_augment_training_runs(data):
    train_b, _, _ = data
    cfg = NetConfig.build(**SMALL)
    _, _, hist = train(cfg, TrainConfig(epochs=1, batch_size=8, scale_augment=True), train_b)
    assert np.isfinite(hist[0])


def test_mismatched_block_lists():
    with pytest.raises(ValueError):
        NetConfig.build(m=(8, 4), k=(4,), radius=(0.5,), channels=(2,))
