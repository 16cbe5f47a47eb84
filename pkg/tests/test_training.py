"""
test_training.py

TwinNet / SiameseNet training loops, gradient wiring and the divergence guard.
"""
from unittest.mock import patch

import numpy as np
import pytest

from channel import RngStream, awgn
from errors import ConfigurationError, NumericalError, TrainingDivergedError, UsageError
from models import ArchitectureSpec, MessageBatch, build_pair, extract_codebook
from nn_core import LossResult
from training import (PairTrainer, TrainingConfig, sample_snr, siamese_cross_check, siamese_cross_gradient,
                      siamese_gradients, siamese_relu_margin, train_pair, train_siamesenet, train_twinnet)

TINY = ArchitectureSpec(k=2, n=4, encoder_hidden=8, decoder_hidden=8)


def tiny_config(**settings):
    values = dict(model_kind="twin", alpha=1.0, epochs=2, batches_per_epoch=4, batch_size=16, seed=3, arch=TINY)
    values.update(settings)
    return TrainingConfig(**values)


def fixed_realization(seed=0, batch=8, alpha=0.7):
    rng = RngStream(seed).generator()
    pair = build_pair(TINY, seed)
    return (pair, alpha, MessageBatch.random(batch, TINY.k, rng), MessageBatch.random(batch, TINY.k, rng),
            awgn(batch, TINY.n, 0.5, rng), awgn(batch, TINY.n, 0.5, rng))


# ---- configuration ----

def test_reversed_snr_range_is_rejected():
    with pytest.raises(ConfigurationError) as excinfo:
        tiny_config(snr_range_db=(12.0, 1.0))
    assert excinfo.value.key == "snr_range_db"


def test_batch_of_one_needs_per_codeword_normalization():
    with pytest.raises(ConfigurationError):
        tiny_config(batch_size=1)
    arch = ArchitectureSpec(k=2, n=4, encoder_hidden=8, decoder_hidden=8, power_mode="per_codeword")
    assert tiny_config(batch_size=1, arch=arch).batch_size == 1


@pytest.mark.parametrize("settings", [{"model_kind": "triplet"}, {"alpha": -1.0}, {"epochs": 0},
                                      {"learning_rate": 0.0}, {"optimizer": "lbfgs"},
                                      {"lr_decay": 0.0}, {"lr_decay": 1.5}, {"lr_decay_at": (0.5, 1.0)}])
def test_invalid_training_settings(settings):
    with pytest.raises(ConfigurationError):
        tiny_config(**settings)


def test_learning_rate_schedule_steps_down():
    config = tiny_config(epochs=20, learning_rate=1e-2, lr_decay=0.5, lr_decay_at=(0.85, 0.6))
    assert config.lr_decay_at == (0.6, 0.85)
    assert [config.learning_rate_at(e) for e in (0, 11, 13, 16, 18, 19)] == pytest.approx(
        [1e-2, 1e-2, 5e-3, 5e-3, 2.5e-3, 2.5e-3])
    assert tiny_config(lr_decay=1.0).learning_rate_at(1) == tiny_config().learning_rate


def test_sample_snr_stays_in_range_and_is_reproducible():
    draws = [sample_snr((1.0, 12.0), RngStream(9, (i,))) for i in range(200)]
    assert all(1.0 <= d <= 12.0 for d in draws)
    assert draws == [sample_snr((1.0, 12.0), RngStream(9, (i,))) for i in range(200)]
    assert sample_snr((5.0, 5.0), RngStream(0)) == 5.0


# ---- training loops ----

def test_twinnet_training_produces_trace_and_calibrated_pair():
    pair, trace = train_twinnet(tiny_config())
    assert pair.trained and pair.model_kind == "twin"
    assert trace.epochs == 2
    assert len(trace.eb_n0_log) == 2 * 4
    assert all(1.0 <= snr <= 12.0 for snr in trace.eb_n0_log)
    assert [row["epoch"] for row in trace.rows()] == [1, 2]
    for user in (1, 2):
        assert extract_codebook(pair, user).mean_power() == pytest.approx(TINY.n, rel=1e-9)


def test_siamesenet_training_runs():
    pair, trace = train_siamesenet(tiny_config(model_kind="siamese"))
    assert pair.trained and pair.model_kind == "siamese"
    assert np.all(np.isfinite(trace.loss_user1 + trace.loss_user2))


def test_entry_points_check_model_kind():
    with pytest.raises(UsageError):
        train_twinnet(tiny_config(model_kind="siamese"))
    with pytest.raises(UsageError):
        train_siamesenet(tiny_config(model_kind="twin"))


@pytest.mark.parametrize("kind", ["twin", "siamese"])
def test_training_is_deterministic(kind):
    a, trace_a = train_pair(tiny_config(model_kind=kind))
    b, trace_b = train_pair(tiny_config(model_kind=kind))
    assert trace_a.loss_user1 == trace_b.loss_user1
    assert trace_a.eb_n0_log == trace_b.eb_n0_log
    for user in (1, 2):
        assert np.array_equal(extract_codebook(a, user).matrix, extract_codebook(b, user).matrix)


def test_twinnet_learns_without_interference():
    config = tiny_config(alpha=0.0, epochs=8, batches_per_epoch=20, batch_size=64, learning_rate=1e-2)
    _, trace = train_twinnet(config)
    assert trace.loss_user1[-1] < trace.loss_user1[0]
    assert trace.loss_user2[-1] < trace.loss_user2[0]


@pytest.mark.parametrize("kind", ["twin", "siamese"])
def test_loss_trend_is_downward(kind):
    config = tiny_config(model_kind=kind, epochs=20, batches_per_epoch=10, batch_size=64, learning_rate=5e-3)
    _, trace = train_pair(config)
    window = max(1, config.epochs // 10)
    for losses in (trace.loss_user1, trace.loss_user2):
        assert np.median(losses[-window:]) < np.median(losses[:window])


def test_trainer_applies_schedule_to_every_optimizer():
    trainer = PairTrainer(tiny_config(epochs=4, lr_decay=0.5, lr_decay_at=(0.5,)))
    trainer.run()
    assert {state.learning_rate for state in trainer.optimizers.values()} == {5e-4}


def test_twin_half_step_does_not_touch_interferer():
    trainer = PairTrainer(tiny_config())
    before = trainer.pair.copy()
    trainer.twin_user_update(1, sigma=0.5)
    for key, value in trainer.pair.encoder2.parameters().items():
        assert np.array_equal(value, before.encoder2.parameters()[key])
    assert trainer.pair.encoder2.params[-1].norm_running_scale == before.encoder2.params[-1].norm_running_scale
    assert not np.array_equal(trainer.pair.encoder1.params[0].weights, before.encoder1.params[0].weights)
    assert not np.array_equal(trainer.pair.decoder1.params[0].weights, before.decoder1.params[0].weights)


# ---- SiameseNet gradient wiring ----

def smooth_realization(seed):
    """First realization derived from seed whose ReLU inputs all stay 1e-3 away from zero."""
    for attempt in range(100):
        realization = fixed_realization(1000 * seed + attempt)
        if siamese_relu_margin(*realization) >= 1e-3:
            return realization
    raise AssertionError(f"no smooth realization for seed {seed}")


@pytest.mark.parametrize("seed", range(20))
def test_cross_path_gradient_matches_finite_differences(seed):
    assert siamese_cross_check(*smooth_realization(seed)) < 1e-4


def test_cross_gradient_vanishes_without_interference():
    pair, _, batch1, batch2, noise1, noise2 = fixed_realization()
    cross1, cross2 = siamese_cross_gradient(pair, 0.0, batch1, batch2, noise1, noise2)
    assert cross1.max_abs() == 0.0
    assert cross2.max_abs() == 0.0


def test_decoder_gradient_ignores_the_other_receiver():
    pair, alpha, batch1, batch2, noise1, noise2 = fixed_realization()
    base = siamese_gradients(pair, alpha, batch1, batch2, noise1, noise2)
    moved = siamese_gradients(pair, alpha, batch1, batch2, noise1, noise2 + 0.3)
    for key in base.decoder1.keys():
        assert np.array_equal(base.decoder1[key], moved.decoder1[key])
    assert base.loss1.loss == moved.loss1.loss
    assert not np.array_equal(base.decoder2["0.weights"], moved.decoder2["0.weights"])


def test_encoder_gradient_is_sum_of_both_losses():
    grads = siamese_gradients(*fixed_realization())
    for key in grads.encoder1.keys():
        assert np.array_equal(grads.encoder1[key], grads.encoder1_own[key] + grads.encoder1_cross[key])
    assert grads.encoder1_cross.max_abs() > 0.0


# ---- divergence guard ----

def test_divergence_guard_aborts_with_partial_trace():
    config = tiny_config(epochs=10, batches_per_epoch=1)
    losses = iter([(1.0, 1.0)] + [(20.0, 20.0)] * 9)
    with patch.object(PairTrainer, "twin_step", side_effect=lambda sigma: next(losses)):
        with pytest.raises(TrainingDivergedError) as excinfo:
            train_twinnet(config)
    assert excinfo.value.trace.epochs == 4
    assert excinfo.value.exit_code == 4


def test_non_finite_loss_aborts_training():
    def nan_loss(posterior, targets):
        return LossResult(float("nan"), np.zeros_like(posterior), 0)

    with patch("training.cross_entropy_loss_and_grad", side_effect=nan_loss):
        with pytest.raises(TrainingDivergedError):
            train_twinnet(tiny_config())


@pytest.mark.parametrize("kind", ["twin", "siamese"])
def test_nan_weight_aborts_with_trace(kind):
    trainer = PairTrainer(tiny_config(model_kind=kind))
    trainer.pair.encoder1.params[0].weights[:] = np.nan
    with pytest.raises(TrainingDivergedError) as excinfo:
        trainer.run()
    assert excinfo.value.trace is trainer.trace
    assert excinfo.value.trace.epochs == 0
    assert excinfo.value.exit_code == 4
    assert isinstance(excinfo.value.__cause__, NumericalError)
    assert not isinstance(excinfo.value.__cause__, TrainingDivergedError)
