"""
evaluation.py

Monte Carlo block error rate measurement for trained pairs, the analytic
TDMA / uncoded BPSK reference curve and the interference-mismatch sweep.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfc, erfcinv

from channel import STREAM_EVAL, RandomSource, RngStream, as_generator, awgn, noise_sigma
from errors import ConfigurationError, NumericalError, UsageError
from models import TrainedPair, decode, extract_codebook, hard_decision


DEFAULT_MIN_ERRORS = 200
DEFAULT_MAX_FRAMES = 2_000_000
DEFAULT_CHUNK_FRAMES = 10_000
DEFAULT_EVAL_SNRS_DB = tuple(float(snr) for snr in range(0, 9))
MISMATCH_EVAL_ALPHAS = (1.0, 10.0, 20.0)

logger = logging.getLogger("Evaluation")


@dataclass(frozen=True)
class StopRule:
    """Stop once both users reach min_errors block errors, or after max_frames frames."""

    min_errors: int = DEFAULT_MIN_ERRORS
    max_frames: int = DEFAULT_MAX_FRAMES
    chunk_frames: int = DEFAULT_CHUNK_FRAMES

    def __post_init__(self) -> None:
        if self.min_errors < 1:
            raise ConfigurationError(f"min_errors must be >= 1, got {self.min_errors}", key="min_errors")
        if self.max_frames < 1:
            raise ConfigurationError(f"max_frames must be >= 1, got {self.max_frames}", key="max_frames")
        if self.chunk_frames < 1:
            raise ConfigurationError(f"chunk_frames must be >= 1, got {self.chunk_frames}", key="chunk_frames")


@dataclass(frozen=True)
class BlerPoint:
    eb_n0_db: float
    alpha_eval: float
    frames: int
    errors_user1: int
    errors_user2: int

    @property
    def bler_user1(self) -> float:
        return self.errors_user1 / self.frames

    @property
    def bler_user2(self) -> float:
        return self.errors_user2 / self.frames


@dataclass
class SweepResult:
    """BLER grid over (alpha_eval, eb_n0_db) for one trained pair."""

    train_alpha: float
    model_kind: str
    points: List[BlerPoint] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        coordinates = [(p.alpha_eval, p.eb_n0_db) for p in self.points]
        if len(set(coordinates)) != len(coordinates):
            raise UsageError("Sweep grid contains duplicate (alpha, Eb/N0) coordinates")

    @property
    def alphas(self) -> List[float]:
        return sorted({p.alpha_eval for p in self.points})

    @property
    def snrs_db(self) -> List[float]:
        return sorted({p.eb_n0_db for p in self.points})

    def point(self, alpha_eval: float, eb_n0_db: float) -> BlerPoint:
        for p in self.points:
            if p.alpha_eval == alpha_eval and p.eb_n0_db == eb_n0_db:
                return p
        raise UsageError(f"No grid point at alpha={alpha_eval}, Eb/N0={eb_n0_db} dB")

    def curve(self, alpha_eval: float) -> List[BlerPoint]:
        return sorted((p for p in self.points if p.alpha_eval == alpha_eval), key=lambda p: p.eb_n0_db)


def point_stream(seed: int, alpha_eval: float, eb_n0_db: float) -> RngStream:
    """
    Stream owned by one grid point. Keyed by the coordinate values themselves,
    so a point draws the same samples whatever grid or worker it runs in.
    """
    alpha_key = int(np.float64(alpha_eval).view(np.uint64))
    snr_key = int(np.float64(eb_n0_db).view(np.uint64))
    return RngStream(seed).substream(STREAM_EVAL, alpha_key, snr_key)


# -------------------------------------------------------------
# Counting harness
# -------------------------------------------------------------

ChunkErrors = Callable[[int, np.random.Generator], Tuple[np.ndarray, np.ndarray]]


def _count_block_errors(draw_chunk: ChunkErrors, stop: StopRule, rng: RandomSource) -> Tuple[int, int, int]:
    gen = as_generator(rng)
    frames = errors1 = errors2 = 0
    while frames < stop.max_frames and (errors1 < stop.min_errors or errors2 < stop.min_errors):
        size = min(stop.chunk_frames, stop.max_frames - frames)
        wrong1, wrong2 = draw_chunk(size, gen)
        errors1 += int(np.count_nonzero(wrong1))
        errors2 += int(np.count_nonzero(wrong2))
        frames += size
    return frames, errors1, errors2


def _check_pair(pair: TrainedPair) -> None:
    if not pair.trained:
        logger.error("Refusing to evaluate an untrained pair")
        raise UsageError("Pair has not been trained; refusing to measure BLER")
    if not pair.is_finite():
        logger.error("Refusing to evaluate a pair with non-finite parameters")
        raise NumericalError("Pair contains non-finite parameters; refusing to measure BLER")


def simulate_bler(pair: TrainedPair, alpha_eval: float, eb_n0_db: float, stop: Optional[StopRule] = None,
                  rng: Optional[RandomSource] = None) -> BlerPoint:
    """
    Estimate both users' BLER at one operating point.

    Args:
        pair: trained encoder/decoder pair.
        alpha_eval: interference strength used by the channel.
        eb_n0_db: Eb/N0 in dB.
        stop: stop rule (defaults: 200 errors per user, 2e6 frames).
        rng: stream or generator for messages and noise.
    Returns:
        BlerPoint with per-user error counts.
    """
    stop = stop or StopRule()
    if rng is None:
        raise UsageError("simulate_bler needs an explicit random stream")
    if alpha_eval < 0:
        raise ConfigurationError(f"alpha_eval must be >= 0, got {alpha_eval}", key="alpha")
    _check_pair(pair)
    arch = pair.arch
    sigma = noise_sigma(eb_n0_db, arch.rate)
    # encoding is deterministic at inference, so frames index the clean codebooks
    book1 = extract_codebook(pair, 1).matrix
    book2 = extract_codebook(pair, 2).matrix

    def draw_chunk(size: int, gen: np.random.Generator):
        m1 = gen.integers(0, arch.message_count, size=size)
        m2 = gen.integers(0, arch.message_count, size=size)
        noise1 = awgn(size, arch.n, sigma, gen)
        noise2 = awgn(size, arch.n, sigma, gen)
        y1 = book1[m1] + alpha_eval * book2[m2] + noise1
        y2 = book2[m2] + alpha_eval * book1[m1] + noise2
        return (hard_decision(decode(pair, 1, y1)) != m1,
                hard_decision(decode(pair, 2, y2)) != m2)

    frames, errors1, errors2 = _count_block_errors(draw_chunk, stop, rng)
    point = BlerPoint(float(eb_n0_db), float(alpha_eval), frames, errors1, errors2)
    logger.info(f"alpha={alpha_eval} Eb/N0={eb_n0_db} dB: {frames} frames, "
                f"BLER u1={point.bler_user1:.3e} u2={point.bler_user2:.3e}")
    return point


def simulate_uncoded_bpsk(eb_n0_db: float, k: int, stop: Optional[StopRule] = None,
                          rng: Optional[RandomSource] = None) -> BlerPoint:
    """
    Uncoded BPSK blocks of k bits for two orthogonal (TDMA) users through the
    same counting harness as simulate_bler. Used to validate the estimator.
    """
    stop = stop or StopRule()
    if rng is None:
        raise UsageError("simulate_uncoded_bpsk needs an explicit random stream")
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}", key="k")
    # one bit per real symbol: Eb = Es = 1
    sigma = noise_sigma(eb_n0_db, 1.0)

    def user_errors(size: int, gen: np.random.Generator) -> np.ndarray:
        bits = gen.integers(0, 2, size=(size, k))
        received = (1.0 - 2.0 * bits) + awgn(size, k, sigma, gen)
        return np.any((received < 0) != (bits == 1), axis=1)

    def draw_chunk(size: int, gen: np.random.Generator):
        return user_errors(size, gen), user_errors(size, gen)

    frames, errors1, errors2 = _count_block_errors(draw_chunk, stop, rng)
    return BlerPoint(float(eb_n0_db), 0.0, frames, errors1, errors2)


# -------------------------------------------------------------
# Analytic reference
# -------------------------------------------------------------

def q_function(x):
    """Gaussian tail Q(x) = 0.5 erfc(x / sqrt(2)). Scalars in, float out."""
    values = 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))
    return float(values) if np.ndim(values) == 0 else values


def tdma_bpsk_bler(eb_n0_db: float, k: int) -> float:
    """
    Block error rate of k uncoded BPSK bits per block:
    BER = Q(sqrt(2 Eb/N0)), BLER = 1 - (1 - BER)^k.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}", key="k")
    ber = q_function(np.sqrt(2.0 * 10.0 ** (eb_n0_db / 10.0)))
    return float(-np.expm1(k * np.log1p(-ber)))


def tdma_eb_n0_at(target_bler: float, k: int) -> float:
    """Eb/N0 (dB) at which the analytic TDMA curve reaches target_bler."""
    if not 0 < target_bler < 1:
        raise UsageError(f"target_bler must lie in (0, 1), got {target_bler}")
    ber = -np.expm1(np.log1p(-target_bler) / k)
    x = np.sqrt(2.0) * erfcinv(2.0 * ber)
    return float(10.0 * np.log10(x * x / 2.0))


def horizontal_gain_db(snrs_db: Sequence[float], blers: Sequence[float], k: int,
                       target_bler: float = 1e-2) -> float:
    """
    Eb/N0 gap (dB) between the TDMA curve and a measured curve at target_bler.
    Positive means the measured system needs less Eb/N0. The measured crossing
    is found by linear interpolation of log10(BLER) against Eb/N0 in dB.
    """
    curve = sorted((float(s), float(b)) for s, b in zip(snrs_db, blers) if b > 0)
    log_target = np.log10(target_bler)
    for (s0, b0), (s1, b1) in zip(curve, curve[1:]):
        if b0 >= target_bler >= b1:
            l0, l1 = np.log10(b0), np.log10(b1)
            measured = s0 if l0 == l1 else s0 + (log_target - l0) * (s1 - s0) / (l1 - l0)
            return tdma_eb_n0_at(target_bler, k) - measured
    logger.error(f"Measured curve never crosses BLER={target_bler}")
    raise UsageError(f"Measured curve does not cross the target BLER {target_bler}")


# -------------------------------------------------------------
# Sweeps
# -------------------------------------------------------------

def mismatch_sweep(pair: TrainedPair, alphas_eval: Sequence[float], snrs_db: Sequence[float],
                   stop: Optional[StopRule] = None, seed: int = 0, threads: int = 1) -> SweepResult:
    """
    Full (alpha_eval x Eb/N0) grid of simulate_bler calls. Every point owns its
    stream, so the result does not depend on the number of worker threads.
    """
    stop = stop or StopRule()
    if threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}", key="threads")
    _check_pair(pair)
    grid = [(float(alpha), float(snr)) for alpha in alphas_eval for snr in snrs_db]
    if len(set(grid)) != len(grid):
        raise UsageError("Duplicate alpha or Eb/N0 values in sweep grid")
    logger.info(f"Sweeping {len(grid)} points of the {pair.model_kind} pair trained at alpha={pair.train_alpha} "
                f"with {threads} thread(s)")

    def run_point(coordinate: Tuple[float, float]) -> BlerPoint:
        alpha, snr = coordinate
        return simulate_bler(pair, alpha, snr, stop, point_stream(seed, alpha, snr))

    if threads == 1:
        points = [run_point(coordinate) for coordinate in grid]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(run_point, grid))
    return SweepResult(train_alpha=pair.train_alpha, model_kind=pair.model_kind, points=points,
                       metadata={"seed": seed, "k": pair.arch.k, "n": pair.arch.n,
                                 "min_errors": stop.min_errors, "max_frames": stop.max_frames})


def evaluate_matched(pair: TrainedPair, snrs_db: Sequence[float], stop: Optional[StopRule] = None,
                     seed: int = 0, threads: int = 1) -> SweepResult:
    """BLER curve with the channel's alpha equal to the training alpha."""
    return mismatch_sweep(pair, [pair.train_alpha], snrs_db, stop, seed, threads)
