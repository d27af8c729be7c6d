import math

import numpy as np
import pytest

import gammanet.train as train_mod
from gammanet.autodiff import ParamStore, ShapeError, Tensor
from gammanet.dataio import synth_dataset
from gammanet.model import ModelConfig, init_params
from gammanet.train import (AdamState, DivergenceError, SkipBatch, TrainConfig, TrainingContractError,
                            adam_step, evaluate, masked_mae_loss, metrics, report_from_predictions, train)

TINY = dict(T=12, T_prime=12, d_f=2, d_a=2, num_layers=1, num_heads=2, d_state=2)


def test_loss_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert masked_mae_loss(Tensor(y), y, np.ones(3, bool)).item() == 0.0
    yh = Tensor([2.0, 2.0, 5.0], requires_grad=True)
    loss = masked_mae_loss(yh, y, np.ones(3, bool))
    assert loss.item() == 1.0
    assert masked_mae_loss(yh, y, np.array([True, False, False])).item() == 1.0
    loss.backward()
    np.testing.assert_allclose(yh.grad, [1 / 3, 0.0, 1 / 3])
    with pytest.raises(SkipBatch):
        masked_mae_loss(yh, y, np.zeros(3, bool))
    with pytest.raises(ShapeError):
        masked_mae_loss(yh, y[:2], np.ones(2, bool))


def test_metric_examples():
    mae, rmse, _ = metrics([2.0, 2.0, 5.0], [1.0, 2.0, 3.0], np.ones(3, bool))
    assert abs(mae - 1.0) < 1e-9 and abs(rmse - math.sqrt(5 / 3)) < 1e-9
    _, _, mape = metrics([2.0, 2.0, 5.0], [1.0, 2.0, 4.0], np.ones(3, bool))
    assert abs(mape - 125.0 / 3) < 1e-9
    assert metrics([1.0, 2.0], [1.0, 2.0], np.ones(2, bool)) == (0.0, 0.0, 0.0)


def test_metrics_scale_consistent(rng):
    y = rng.uniform(1, 10, 50)
    yh = y + rng.normal(0, 1, 50)
    mask = rng.random(50) < 0.8
    base = metrics(yh, y, mask)
    for c in (0.5, 3.0):
        mae, rmse, mape = metrics(c * yh, c * y, mask)
        assert mae == pytest.approx(c * base[0], rel=1e-12)
        assert rmse == pytest.approx(c * base[1], rel=1e-12)
        assert mape == pytest.approx(base[2], rel=1e-12)


def test_loss_and_metric_masks_agree(rng):
    y = rng.uniform(1, 10, (4, 6))
    y[0, :3] = 0.0
    yh = y + rng.normal(0, 1, y.shape)
    mask = y != 0
    assert masked_mae_loss(Tensor(yh), y, mask).item() == pytest.approx(metrics(yh, y, mask)[0], rel=1e-12)


def test_adam_first_step_and_zero_grad():
    store = ParamStore({"w": np.array([0.5]), "v": np.array([1.0, -1.0])})
    store["w"].grad = np.array([1.0])
    store["v"].grad = np.zeros(2)
    adam_step(store, AdamState(), TrainConfig())
    assert store["w"].data[0] == pytest.approx(0.5 - 1e-3, abs=1e-10)
    np.testing.assert_array_equal(store["v"].data, [1.0, -1.0])
    assert store["w"].grad is None and store["v"].grad is None


def test_adam_missing_gradient():
    store = ParamStore({"w": np.array([0.5])})
    with pytest.raises(TrainingContractError, match="'w'"):
        adam_step(store, AdamState(), TrainConfig())


def test_train_config_validation():
    assert TrainConfig(lr=0).validate()
    assert TrainConfig(patience=0).validate()
    assert not TrainConfig().validate()


@pytest.fixture(scope="module")
def small_ds():
    return synth_dataset(4, 2, 3)


def test_training_is_bit_reproducible(small_ds):
    cfg = ModelConfig(**TINY)
    tcfg = TrainConfig(max_epochs=2, seed=7, batch_size=32)
    a, b = train(small_ds, cfg, tcfg), train(small_ds, cfg, tcfg)
    assert a.params.equal(b.params)
    assert [r.val_mae for r in a.history] == [r.val_mae for r in b.history]
    assert len(a.history) <= 2


def test_patience_semantics(small_ds, monkeypatch):
    scripted = iter([5.0, 4.0, 3.0] + [3.0 + k for k in range(1, 50)])
    monkeypatch.setattr(train_mod, "predict_raw", lambda *a, **k: np.zeros(1))
    monkeypatch.setattr(train_mod, "metrics", lambda *a: (next(scripted), 0.0, 0.0))
    monkeypatch.setattr(train_mod, "train_step", lambda *a: 1.0)
    res = train(small_ds, ModelConfig(**TINY), TrainConfig(max_epochs=100, patience=4))
    assert res.best_epoch == 3
    assert len(res.history) == 3 + 4
    assert [r.is_best for r in res.history[:4]] == [True, True, True, False]


def test_divergence_names_batch(small_ds):
    cfg = ModelConfig(**TINY)
    orig = train_mod.init_params

    def poisoned(*a, **k):
        store = orig(*a, **k)
        store["head.b"].data[...] = np.nan
        return store

    train_mod.init_params = poisoned
    try:
        with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
            train(small_ds, cfg, TrainConfig(max_epochs=1))
    finally:
        train_mod.init_params = orig


def test_report_structure_and_slicing(rng):
    y = rng.uniform(1, 50, (9, 3, 12))
    y[0, 0, :4] = 0.0
    pred = y + rng.normal(0, 2, y.shape)
    mask = y != 0
    rep = report_from_predictions(pred, y, mask)
    assert sorted(rep.named()) == [3, 6, 12]
    assert rep.horizons[3] == metrics(pred[..., 2], y[..., 2], mask[..., 2])
    avg = rep.to_dict()["avg"]
    assert avg["mae"] == pytest.approx(np.mean([v[0] for v in rep.horizons.values()]), rel=1e-14)
    perfect = report_from_predictions(y, y, mask)
    assert all(v == (0.0, 0.0, 0.0) for v in perfect.horizons.values())


def test_evaluate_checks_nodes(small_ds):
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, synth_dataset(5, 1, 0).topology, 0)
    from gammanet.dataio import NormStats
    with pytest.raises(ShapeError):
        evaluate(params, cfg, NormStats(0.0, 1.0), small_ds)


def test_overfit_single_batch():
    ds = synth_dataset(3, 1, 0)
    cfg = ModelConfig(**dict(TINY, T=4, T_prime=4))
    from gammanet.dataio import compute_stats, make_windows
    rows = range(0, 64)
    stats = compute_stats(ds, rows)
    w = make_windows(ds, rows, 4, 4, stats)
    idx = np.arange(8)
    params = init_params(cfg, ds.topology, 0)
    state = AdamState()
    tcfg = TrainConfig(lr=1e-2)
    losses = [train_mod.train_step(params, state, tcfg, cfg, ds, stats, w.x[idx], w.y[idx], w.y_mask[idx])
              for _ in range(200)]
    assert losses[-1] < 0.05 * losses[0]
