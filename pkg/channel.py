"""
channel.py

Two-user symmetric interference AWGN channel.
- Noise calibration from Eb/N0 and code rate: sigma^2 = 1 / (2 r Eb/N0)
- Reproducible Gaussian sampling from labeled random streams
- Received-signal superposition y_i = z_i + alpha * z_j + n_i
Signals are real-valued; sigma is per real dimension.
"""

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from errors import ConfigurationError, UsageError
from nn_core import as_tensor2


# Substream labels. Every random draw in the toolkit comes from a stream
# keyed by (master seed, label, ...) so parallel workers never overlap.
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_HARNESS = 3


def noise_sigma(eb_n0_db: float, rate: float) -> float:
    """
    Noise standard deviation per real dimension for a given Eb/N0 (dB) and code rate r = k/n.
    Raises:
        ConfigurationError: if rate <= 0.
    """
    if not rate > 0:
        raise ConfigurationError(f"Code rate must be > 0, got {rate}", key="rate")
    eb_n0 = 10.0 ** (eb_n0_db / 10.0)
    return float(np.sqrt(1.0 / (2.0 * rate * eb_n0)))


@dataclass(frozen=True)
class ChannelParams:
    """Symmetric interference strength, operating point and the derived noise sigma."""

    alpha: float
    eb_n0_db: float
    rate: float

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}", key="alpha")
        if not 0 < self.rate <= 1:
            raise ConfigurationError(f"rate must lie in (0, 1], got {self.rate}", key="rate")

    @property
    def sigma(self) -> float:
        return noise_sigma(self.eb_n0_db, self.rate)


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible random stream: Philox counter-based generator keyed by a
    64-bit seed and a substream path. Identical (seed, stream) always yields
    identical samples; distinct paths yield independent streams.
    """

    seed: int
    stream: Tuple[int, ...] = field(default_factory=tuple)
    algorithm: str = "philox"

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(sequence))

    def substream(self, *labels: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(label) for label in labels), self.algorithm)


RandomSource = Union[RngStream, np.random.Generator]


def as_generator(rng: RandomSource) -> np.random.Generator:
    """Accept either a stream description (fresh generator) or a live generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise UsageError(f"Expected RngStream or numpy Generator, got {type(rng).__name__}")


def awgn(batch: int, width: int, sigma: float, rng: RandomSource) -> np.ndarray:
    """
    I.i.d. zero-mean Gaussian noise of shape (batch, width) and standard deviation sigma.
    sigma = 0 returns zeros without consuming random numbers.
    """
    if sigma < 0:
        raise UsageError(f"sigma must be >= 0, got {sigma}")
    if batch < 1 or width < 1:
        raise UsageError(f"Noise shape must be positive, got ({batch}, {width})")
    if sigma == 0:
        return np.zeros((batch, width))
    return sigma * as_generator(rng).standard_normal((batch, width))


def superpose(z_own, z_other, alpha: float, noise) -> np.ndarray:
    """Received signal y = z_own + alpha * z_other + noise (elementwise)."""
    own = as_tensor2(z_own, name="z_own")
    other = as_tensor2(z_other, name="z_other")
    n = as_tensor2(noise, name="noise")
    if own.shape != other.shape or own.shape != n.shape:
        raise UsageError(f"Shape mismatch in superpose: {own.shape}, {other.shape}, {n.shape}")
    return own + alpha * other + n
