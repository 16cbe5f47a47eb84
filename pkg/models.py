"""
models.py

Encoder / decoder pair definitions for the two-user interference channel.
- Encoder: one-hot(2^k) -> Dense+ReLU(encoder_hidden) -> Dense+linear(n) -> power normalization
- Decoder: y(n) -> Dense+ReLU(decoder_hidden) -> Dense+linear(decoder_hidden) -> Dense+softmax(2^k)
- Average power constraint E[||z||^2] = n, argmax decision rule, codebook extraction
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from channel import STREAM_INIT, RandomSource, RngStream, as_generator
from errors import ConfigurationError, UsageError
from nn_core import POWER_MODES, Network, as_tensor2, build_network, forward


FORMAT_VERSION = 1
MODEL_KINDS = ("twin", "siamese")
USERS = (1, 2)

logger = logging.getLogger("Models")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Block sizes and hidden widths shared by both users."""

    k: int = 4
    n: int = 8
    encoder_hidden: int = 32
    decoder_hidden: int = 64
    power_mode: str = "batch_average"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}", key="k")
        if self.n < self.k:
            raise ConfigurationError(f"n must be >= k, got n={self.n}, k={self.k}", key="n")
        if self.encoder_hidden < 1:
            raise ConfigurationError("encoder_hidden must be >= 1", key="encoder_hidden")
        if self.decoder_hidden < 1:
            raise ConfigurationError("decoder_hidden must be >= 1", key="decoder_hidden")
        if self.power_mode not in POWER_MODES:
            raise ConfigurationError(f"Unknown power_mode '{self.power_mode}'", key="power_mode")

    @property
    def message_count(self) -> int:
        return 2 ** self.k

    @property
    def rate(self) -> float:
        return self.k / self.n


@dataclass
class MessageBatch:
    """Message indices and their one-hot rows."""

    indices: np.ndarray
    one_hot: np.ndarray

    @classmethod
    def from_indices(cls, indices: Sequence[int], k: int) -> "MessageBatch":
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        count = 2 ** k
        if indices.size == 0:
            raise UsageError("A message batch needs at least one message")
        if np.any(indices < 0) or np.any(indices >= count):
            raise UsageError(f"Message index out of range [0, {count})")
        one_hot = np.zeros((indices.size, count))
        one_hot[np.arange(indices.size), indices] = 1.0
        return cls(indices=indices, one_hot=one_hot)

    @classmethod
    def random(cls, size: int, k: int, rng: RandomSource) -> "MessageBatch":
        """I.i.d. uniform messages, drawn with replacement."""
        return cls.from_indices(as_generator(rng).integers(0, 2 ** k, size=size), k)

    @classmethod
    def all_messages(cls, k: int) -> "MessageBatch":
        return cls.from_indices(np.arange(2 ** k), k)

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class CodeBook:
    """2^k x n matrix; row b is the codeword of message b."""

    matrix: np.ndarray

    @property
    def message_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def row_powers(self) -> np.ndarray:
        return np.sum(self.matrix * self.matrix, axis=1)

    def mean_power(self) -> float:
        return float(np.mean(self.row_powers()))


@dataclass
class TrainedPair:
    """Encoders and decoders of both users plus the settings they were trained with."""

    encoder1: Network
    decoder1: Network
    encoder2: Network
    decoder2: Network
    arch: ArchitectureSpec
    train_alpha: float = 0.0
    train_snr_range_db: Tuple[float, float] = (1.0, 12.0)
    seed: int = 0
    model_kind: str = "twin"
    format_version: int = FORMAT_VERSION
    trained: bool = False

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"Unknown model_kind '{self.model_kind}'", key="model_kind")
        m, n = self.arch.message_count, self.arch.n
        for name, net, widths in (("encoder1", self.encoder1, (m, n)), ("encoder2", self.encoder2, (m, n)),
                                  ("decoder1", self.decoder1, (n, m)), ("decoder2", self.decoder2, (n, m))):
            if (net.in_width, net.out_width) != widths:
                raise ConfigurationError(
                    f"{name} maps {net.in_width}->{net.out_width}, architecture needs {widths[0]}->{widths[1]}",
                    key=name)

    def encoder(self, user: int) -> Network:
        _check_user(user)
        return self.encoder1 if user == 1 else self.encoder2

    def decoder(self, user: int) -> Network:
        _check_user(user)
        return self.decoder1 if user == 1 else self.decoder2

    def networks(self):
        return {"encoder1": self.encoder1, "decoder1": self.decoder1,
                "encoder2": self.encoder2, "decoder2": self.decoder2}

    def copy(self) -> "TrainedPair":
        return TrainedPair(self.encoder1.copy(), self.decoder1.copy(), self.encoder2.copy(),
                           self.decoder2.copy(), self.arch, self.train_alpha, self.train_snr_range_db,
                           self.seed, self.model_kind, self.format_version, self.trained)

    def is_finite(self) -> bool:
        for net in self.networks().values():
            for array in net.parameters().values():
                if not np.all(np.isfinite(array)):
                    return False
            if not all(np.isfinite(p.norm_running_scale) for p in net.params):
                return False
        return True


def _check_user(user: int) -> None:
    if user not in USERS:
        raise UsageError(f"user must be 1 or 2, got {user}")


def build_encoder(arch: ArchitectureSpec, rng: RandomSource) -> Network:
    blueprint = [("dense", arch.encoder_hidden), ("relu", 0),
                 ("dense", arch.n), ("linear", 0),
                 ("batch_power_norm", 0)]
    return build_network(blueprint, arch.message_count, as_generator(rng), power_mode=arch.power_mode)


def build_decoder(arch: ArchitectureSpec, rng: RandomSource) -> Network:
    blueprint = [("dense", arch.decoder_hidden), ("relu", 0),
                 ("dense", arch.decoder_hidden), ("linear", 0),
                 ("dense", arch.message_count), ("softmax", 0)]
    return build_network(blueprint, arch.n, as_generator(rng))


def build_pair(arch: ArchitectureSpec, seed: int, model_kind: str = "twin", train_alpha: float = 0.0,
               train_snr_range_db: Tuple[float, float] = (1.0, 12.0)) -> TrainedPair:
    """
    Four freshly initialized networks. Each network draws from its own substream,
    so both users share the architecture but never the parameters.
    """
    root = RngStream(seed).substream(STREAM_INIT)
    return TrainedPair(
        encoder1=build_encoder(arch, root.substream(1, 0)),
        decoder1=build_decoder(arch, root.substream(1, 1)),
        encoder2=build_encoder(arch, root.substream(2, 0)),
        decoder2=build_decoder(arch, root.substream(2, 1)),
        arch=arch,
        train_alpha=train_alpha,
        train_snr_range_db=tuple(train_snr_range_db),
        seed=seed,
        model_kind=model_kind,
    )


def encode(pair: TrainedPair, user: int, batch: MessageBatch, mode: str = "infer") -> np.ndarray:
    """
    Codewords z = E_user(M). Infer mode is deterministic and leaves the network untouched;
    train mode uses batch statistics without updating the running scale.
    """
    if np.any(batch.indices >= pair.arch.message_count):
        raise UsageError(f"Message index out of range [0, {pair.arch.message_count})")
    z, _ = forward(pair.encoder(user), batch.one_hot, mode=mode, track_running=False)
    return z


def decode(pair: TrainedPair, user: int, received) -> np.ndarray:
    """Posterior over the 2^k messages for each received row."""
    y = as_tensor2(received, name="received")
    if y.shape[1] != pair.arch.n:
        raise UsageError(f"Received width {y.shape[1]} does not match n={pair.arch.n}")
    posterior, _ = forward(pair.decoder(user), y, mode="infer")
    return posterior


def hard_decision(posterior):
    """
    Argmax decision. Ties resolve to the lowest index.
    Returns an int for a single posterior vector, an index array for a batch.
    """
    probs = np.asarray(posterior, dtype=np.float64)
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)


def extract_codebook(pair: TrainedPair, user: int) -> CodeBook:
    """Infer-mode codewords of all 2^k messages, in message order."""
    return CodeBook(encode(pair, user, MessageBatch.all_messages(pair.arch.k), mode="infer"))


def calibrate_power(pair: TrainedPair) -> TrainedPair:
    """
    Set each encoder's running scale to the exact power statistic of its full
    codebook (messages equiprobable), so the infer-mode codebook has mean
    squared norm n. No-op for per-codeword normalization.
    """
    if pair.arch.power_mode != "batch_average":
        return pair
    all_messages = MessageBatch.all_messages(pair.arch.k)
    for user in USERS:
        encoder = pair.encoder(user)
        index = encoder.power_norm_indices()[-1]
        pre_norm, _ = forward(Network(encoder.layers[:index], encoder.params[:index]),
                              all_messages.one_hot, mode="infer")
        scale = float(np.sqrt(np.mean(np.sum(pre_norm * pre_norm, axis=1)) / pair.arch.n))
        drift = scale / encoder.params[index].norm_running_scale - 1.0
        if abs(drift) > 0.01:
            logger.warning(f"Encoder {user} running scale off by {drift:+.2%}, recalibrating")
        encoder.params[index].norm_running_scale = scale
    return pair
