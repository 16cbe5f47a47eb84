"""
test_acceptance.py

Reproduction checks on fully trained k=4, n=8 models. Training takes minutes
per model, so these only run with IFCAE_RUN_SLOW=1:

    IFCAE_RUN_SLOW=1 pytest tests/test_acceptance.py

Each (model kind, alpha) is trained with three pinned seeds; the checks use
the median seed ranked by matched-alpha BLER at 6 dB.
"""
import os
from functools import lru_cache

import numpy as np
import pytest

from channel import RngStream
from evaluation import (StopRule, evaluate_matched, horizontal_gain_db, mismatch_sweep, simulate_bler,
                        tdma_bpsk_bler)
from latent_analysis import analysis_report
from model_io import pair_to_document
from models import ArchitectureSpec, extract_codebook
from training import TrainingConfig, train_pair

pytestmark = pytest.mark.skipif(os.environ.get("IFCAE_RUN_SLOW") != "1",
                                reason="slow reproduction checks; set IFCAE_RUN_SLOW=1")

SEEDS = (1, 2, 3)
SNRS_DB = tuple(float(s) for s in range(0, 9))
STOP = StopRule(min_errors=200, max_frames=400_000)
RANKING_STOP = StopRule(min_errors=100, max_frames=100_000)


def mean_bler(point):
    return 0.5 * (point.bler_user1 + point.bler_user2)


@lru_cache(maxsize=None)
def trained(model_kind: str, alpha: float, seed: int):
    return train_pair(TrainingConfig(model_kind=model_kind, alpha=alpha, seed=seed, arch=ArchitectureSpec()))


@lru_cache(maxsize=None)
def median_seed(model_kind: str, alpha: float) -> int:
    candidates = []
    for seed in SEEDS:
        pair, _ = trained(model_kind, alpha, seed)
        score = mean_bler(simulate_bler(pair, alpha, 6.0, RANKING_STOP, RngStream(seed).substream(99)))
        candidates.append((score, seed))
    candidates.sort()
    return candidates[1][1]


def median_pair(model_kind: str, alpha: float):
    return trained(model_kind, alpha, median_seed(model_kind, alpha))[0]


@lru_cache(maxsize=None)
def matched_curve(model_kind: str, alpha: float):
    return evaluate_matched(median_pair(model_kind, alpha), SNRS_DB, STOP, seed=5, threads=4)


@pytest.mark.parametrize("model_kind", ["twin", "siamese"])
@pytest.mark.parametrize("alpha", [0.01, 1.0, 10.0])
def test_power_constraint(model_kind, alpha):
    pair = median_pair(model_kind, alpha)
    for user in (1, 2):
        assert extract_codebook(pair, user).mean_power() == pytest.approx(8.0, rel=0.01)


@pytest.mark.parametrize("model_kind", ["twin", "siamese"])
def test_training_loss_converges_at_unit_interference(model_kind):
    _, trace = trained(model_kind, 1.0, median_seed(model_kind, 1.0))
    assert trace.loss_user1[-1] < 0.05
    assert trace.loss_user2[-1] < 0.05


@pytest.mark.parametrize("model_kind", ["twin", "siamese"])
@pytest.mark.parametrize("seed", SEEDS)
def test_loss_trend_is_downward(model_kind, seed):
    _, trace = trained(model_kind, 1.0, seed)
    window = max(1, trace.epochs // 10)
    for losses in (trace.loss_user1, trace.loss_user2):
        assert np.median(losses[-window:]) < np.median(losses[:window])


@pytest.mark.parametrize("model_kind", ["twin", "siamese"])
def test_beats_tdma_at_unit_interference(model_kind):
    curve = matched_curve(model_kind, 1.0).curve(1.0)
    for point in curve:
        if point.eb_n0_db >= 4.0:
            assert max(point.bler_user1, point.bler_user2) <= tdma_bpsk_bler(point.eb_n0_db, 4)
    snrs = [p.eb_n0_db for p in curve]
    for user_blers in ([p.bler_user1 for p in curve], [p.bler_user2 for p in curve]):
        assert horizontal_gain_db(snrs, user_blers, 4) >= 0.5


@pytest.mark.parametrize("model_kind", [
    "twin",
    pytest.param("siamese", marks=pytest.mark.xfail(
        strict=False,
        reason="codebooks held below 0.25 cross-correlation at alpha=10 leave each user about half the "
               "signal space, so 8 dB BLER exceeds 3x the alpha=0.01 BLER")),
])
def test_resilient_to_strong_interference(model_kind):
    strong = matched_curve(model_kind, 10.0).point(10.0, 8.0)
    weak = matched_curve(model_kind, 0.01).point(0.01, 8.0)
    assert mean_bler(strong) <= 3.0 * max(mean_bler(weak), 1.0 / weak.frames)


def test_siamese_generalizes_to_stronger_interference():
    twin = mismatch_sweep(median_pair("twin", 10.0), [20.0], [4.0, 6.0, 8.0], STOP, seed=6, threads=4)
    siamese = mismatch_sweep(median_pair("siamese", 10.0), [20.0], [4.0, 6.0, 8.0], STOP, seed=6, threads=4)
    for snr in (4.0, 6.0, 8.0):
        assert mean_bler(siamese.point(20.0, snr)) < mean_bler(twin.point(20.0, snr))


@pytest.mark.parametrize("model_kind", ["twin", "siamese"])
@pytest.mark.parametrize("alpha,cross_wins", [(0.01, False), (0.1, False), (1.0, True), (10.0, True)])
def test_distance_regime_trend(model_kind, alpha, cross_wins):
    distances = analysis_report(median_pair(model_kind, alpha)).distances
    if cross_wins:
        assert distances.min_cross > distances.min_self
    else:
        assert distances.min_self > distances.min_cross


def test_siamese_codebooks_decouple():
    twin = analysis_report(median_pair("twin", 10.0)).correlations.max_abs_cross
    siamese = analysis_report(median_pair("siamese", 10.0)).correlations.max_abs_cross
    assert siamese < twin
    assert siamese < 0.25


def test_noiseless_limit_has_no_errors():
    pair = median_pair("twin", 0.01)
    point = simulate_bler(pair, 0.0, 40.0, StopRule(min_errors=1, max_frames=100_000), RngStream(8))
    assert point.frames == 100_000
    assert point.errors_user1 == 0 and point.errors_user2 == 0


def test_trained_checksums_are_reproducible():
    config = TrainingConfig(model_kind="siamese", alpha=1.0, seed=1, epochs=5)
    first = pair_to_document(train_pair(config)[0])["checksum"]
    second = pair_to_document(train_pair(config)[0])["checksum"]
    assert first == second
