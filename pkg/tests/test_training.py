from statistics import NormalDist

import numpy as np
import pytest

from conftest import random_pair
from skillbridge.cnmp import CoupledModel, fit_normalization
from skillbridge.experiments import PRESETS
from skillbridge.training import (MAGIC, CheckpointError, TrainConfig, TrainingDiverged, load_checkpoint,
                                  read_loss_log, save_checkpoint, train, write_loss_log)

WIDTHS = {"a": 2, "b": 3}


@pytest.fixture
def pairs():
    rng = np.random.default_rng(0)
    return [random_pair(rng, WIDTHS, 10, f"p{i}") for i in range(3)]


def fresh(pairs, seed=0):
    return CoupledModel.create(WIDTHS, d_lat=6, encoder_hidden=(8,), decoder_hidden=(8,), seed=seed,
                               normalization=fit_normalization(pairs))


def cfg(**kw):
    base = dict(iterations=40, learning_rate=1e-3, log_interval=10, batch_size=2, n_targets=2)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(weight_scheme="random")
    with pytest.raises(ValueError):
        TrainConfig(obs_max=0)
    d = TrainConfig()
    assert (d.learning_rate, d.obs_max, d.batch_size, d.n_targets, d.weight_scheme) == (1e-4, 5, 8, 1, "mixed")


def test_same_seed_bit_identical(pairs):
    m1, r1 = train(fresh(pairs), pairs, cfg(seed=3))
    m2, r2 = train(fresh(pairs), pairs, cfg(seed=3))
    assert m1.params.tobytes() == m2.params.tobytes()
    assert r1.loss_curve == r2.loss_curve
    m3, _ = train(fresh(pairs), pairs, cfg(seed=4))
    assert m3.params.tobytes() != m1.params.tobytes()


def test_training_reduces_loss(pairs):
    _, rep = train(fresh(pairs), pairs, cfg(iterations=600, log_interval=100))
    assert rep.loss_curve[-1][1] < rep.loss_curve[0][1]
    assert [it for it, _ in rep.loss_curve] == list(range(100, 601, 100))


def test_checkpoint_roundtrip(pairs, tmp_path):
    m, _ = train(fresh(pairs), pairs, cfg(iterations=5))
    path = tmp_path / "m.skb"
    save_checkpoint(m, None, path)
    assert path.read_bytes()[:4] == MAGIC
    back, state = load_checkpoint(path)
    assert state is None
    assert back.params.tobytes() == m.params.tobytes()
    assert back.widths == m.widths and back.d_lat == m.d_lat
    for r in WIDTHS:
        assert np.array_equal(back.normalization[r].scale, m.normalization[r].scale)
    save_checkpoint(back, None, tmp_path / "again.skb")
    assert (tmp_path / "again.skb").read_bytes() == path.read_bytes()


def test_resume_matches_uninterrupted(pairs, tmp_path):
    full, _ = train(fresh(pairs), pairs, cfg(iterations=30, seed=9))
    c = cfg(iterations=30, seed=9, checkpoint_interval=10, checkpoint_dir=str(tmp_path))
    _, rep = train(fresh(pairs), pairs, c)
    assert len(rep.checkpoints) == 3
    model, state = load_checkpoint(rep.checkpoints[0])
    assert state.iteration == 10
    resumed, _ = train(model, pairs, cfg(iterations=30, seed=9), state=state)
    assert resumed.params.tobytes() == full.params.tobytes()


def test_on_checkpoint_callback(pairs):
    seen = []
    train(fresh(pairs), pairs, cfg(iterations=20, checkpoint_interval=5), on_checkpoint=lambda it, m: seen.append(it))
    assert seen == [5, 10, 15, 20]


def test_bad_checkpoints_rejected(pairs, tmp_path):
    bad = tmp_path / "bad.skb"
    bad.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    m = fresh(pairs)
    good = tmp_path / "good.skb"
    save_checkpoint(m, None, good)
    data = good.read_bytes()
    (tmp_path / "short.skb").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.skb")
    (tmp_path / "long.skb").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "long.skb")


def test_nan_aborts_naming_head(pairs):
    m = fresh(pairs)
    m.decoders["b"].layers[-1].bias[0] = np.nan
    with pytest.raises(TrainingDiverged, match="b head"):
        train(m, pairs, cfg(iterations=3))


def test_width_mismatch_rejected(pairs):
    m = CoupledModel.create({"a": 2, "b": 4}, d_lat=4, encoder_hidden=(4,), decoder_hidden=(4,))
    with pytest.raises(ValueError):
        train(m, pairs, cfg(iterations=2))


def test_loss_log_roundtrip(tmp_path):
    curve = [(100, -1.25), (200, 0.1 + 0.2)]
    write_loss_log(tmp_path / "loss.csv", curve)
    assert read_loss_log(tmp_path / "loss.csv") == curve
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "100,-1.25"


def test_learning_rate_decay_reaches_final(pairs, tmp_path):
    c = cfg(iterations=11, lr_final=1e-5, checkpoint_dir=str(tmp_path))
    _, rep = train(fresh(pairs), pairs, c)
    _, state = load_checkpoint(rep.checkpoint_path)
    assert state.optimizer.lr == pytest.approx(1e-5)


@pytest.mark.slow
@pytest.mark.parametrize("family", ["same_path", "divergent_path", "radial_push"])
def test_loss_window_means_non_increasing(family):
    # library defaults; a 500-iteration window mean may exceed the previous one only by sampling
    # noise, tested one-sided at 5% per run over its 19 comparisons
    ds = PRESETS[family].dataset()
    z = NormalDist().inv_cdf(1.0 - 0.05 / 19)
    monotone = []
    for seed in range(5):
        model = CoupledModel.create(ds.widths, seed=seed, normalization=ds.normalization)
        _, rep = train(model, ds, TrainConfig(iterations=10000, seed=seed, log_interval=1))
        losses = np.array([v for _, v in rep.loss_curve]).reshape(20, 500)
        means = losses.mean(axis=1)
        se = losses.std(axis=1, ddof=1) / np.sqrt(500)
        slack = z * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
        monotone.append(bool(np.all(means[1:] <= means[:-1] + slack)))
    assert np.mean(monotone) >= 0.95, monotone
