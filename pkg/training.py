"""
training.py

Training of the two-user encoder/decoder pair under randomized Eb/N0.
- TwinNet: users updated alternately; each treats the other's (gradient-severed)
  codewords as interference
- SiameseNet: both encoders descend on L1 + L2 through both channel paths,
  each decoder descends on its own loss only
One Eb/N0 draw (uniform in dB) per minibatch, fresh noise per example.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from channel import STREAM_TRAIN, RandomSource, RngStream, as_generator, awgn, noise_sigma, superpose
from errors import ConfigurationError, NumericalError, TrainingDivergedError, UsageError
from models import (MODEL_KINDS, ArchitectureSpec, MessageBatch, TrainedPair, build_pair,
                    calibrate_power)
from nn_core import (GradientSet, LossResult, OptimizerState, backward, cross_entropy_loss_and_grad,
                     forward, optimizer_step, relu_margin)


@dataclass
class TrainingConfig:
    """Everything that determines one training run."""

    model_kind: str = "twin"
    alpha: float = 1.0
    snr_range_db: Tuple[float, float] = (1.0, 12.0)
    epochs: int = 200
    batches_per_epoch: int = 200
    batch_size: int = 256
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay: float = 0.1
    lr_decay_at: Tuple[float, ...] = (0.6, 0.85)
    seed: int = 0
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    divergence_factor: float = 10.0
    divergence_patience: int = 3

    def __post_init__(self) -> None:
        self.snr_range_db = (float(self.snr_range_db[0]), float(self.snr_range_db[1]))
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"Unknown model_kind '{self.model_kind}'", key="model_kind")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigurationError(f"snr_range_db low > high: {self.snr_range_db}", key="snr_range_db")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0", key="alpha")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1", key="epochs")
        if self.batches_per_epoch < 1:
            raise ConfigurationError("batches_per_epoch must be >= 1", key="batches_per_epoch")
        min_batch = 2 if self.arch.power_mode == "batch_average" else 1
        if self.batch_size < min_batch:
            raise ConfigurationError(f"batch_size must be >= {min_batch}", key="batch_size")
        self.lr_decay_at = tuple(sorted(float(f) for f in self.lr_decay_at))
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must lie in (0, 1]", key="lr_decay")
        if any(not 0 < f < 1 for f in self.lr_decay_at):
            raise ConfigurationError(f"lr_decay_at fractions must lie in (0, 1): {self.lr_decay_at}",
                                     key="lr_decay_at")
        self.optimizer_state()

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate,
                              beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)

    def learning_rate_at(self, epoch: int) -> float:
        """Step schedule: multiplied by lr_decay at every fraction of the run in lr_decay_at (epoch is 0-based)."""
        passed = sum(1 for fraction in self.lr_decay_at if epoch >= fraction * self.epochs)
        return self.learning_rate * self.lr_decay ** passed


@dataclass
class TrainingTrace:
    """Per-epoch mean loss of each user and the Eb/N0 drawn for every batch."""

    loss_user1: List[float] = field(default_factory=list)
    loss_user2: List[float] = field(default_factory=list)
    eb_n0_log: List[float] = field(default_factory=list)
    duration_s: float = 0.0
    saturated: int = 0

    @property
    def epochs(self) -> int:
        return len(self.loss_user1)

    def rows(self) -> List[Dict[str, float]]:
        return [{"epoch": i + 1, "loss_user1": l1, "loss_user2": l2}
                for i, (l1, l2) in enumerate(zip(self.loss_user1, self.loss_user2))]


def sample_snr(range_db: Tuple[float, float], rng: RandomSource) -> float:
    """Eb/N0 in dB, uniform on [low, high] in the dB domain."""
    low, high = range_db
    if low > high:
        raise UsageError(f"Invalid Eb/N0 range {range_db}")
    return float(as_generator(rng).uniform(low, high))


# -------------------------------------------------------------
# SiameseNet gradient wiring
# -------------------------------------------------------------

@dataclass
class SiameseGradients:
    """
    Gradients of one SiameseNet realization. encoderX_own is the gradient of the
    user's own loss, encoderX_cross the gradient of the other user's loss.
    """

    loss1: LossResult
    loss2: LossResult
    decoder1: GradientSet
    decoder2: GradientSet
    encoder1_own: GradientSet
    encoder1_cross: GradientSet
    encoder2_own: GradientSet
    encoder2_cross: GradientSet

    @property
    def encoder1(self) -> GradientSet:
        return self.encoder1_own + self.encoder1_cross

    @property
    def encoder2(self) -> GradientSet:
        return self.encoder2_own + self.encoder2_cross


def siamese_gradients(pair: TrainedPair, alpha: float, batch1: MessageBatch, batch2: MessageBatch,
                      noise1: np.ndarray, noise2: np.ndarray,
                      track_running: bool = False) -> SiameseGradients:
    """
    Forward and backward pass of both users for a fixed message/noise realization:
    y1 = z1 + alpha z2 + n1, y2 = z2 + alpha z1 + n2.
    """
    enc1, enc2 = pair.encoder(1), pair.encoder(2)
    dec1, dec2 = pair.decoder(1), pair.decoder(2)
    z1, enc1_cache = forward(enc1, batch1.one_hot, mode="train", track_running=track_running)
    z2, enc2_cache = forward(enc2, batch2.one_hot, mode="train", track_running=track_running)
    y1 = superpose(z1, z2, alpha, noise1)
    y2 = superpose(z2, z1, alpha, noise2)
    post1, dec1_cache = forward(dec1, y1, mode="train")
    post2, dec2_cache = forward(dec2, y2, mode="train")
    loss1 = cross_entropy_loss_and_grad(post1, batch1.indices)
    loss2 = cross_entropy_loss_and_grad(post2, batch2.indices)

    dec1_grads, dy1 = backward(dec1, dec1_cache, loss1.logit_gradient, from_logits=True)
    dec2_grads, dy2 = backward(dec2, dec2_cache, loss2.logit_gradient, from_logits=True)
    # dy1/dz1 = I, dy2/dz1 = alpha I (and symmetrically for z2)
    enc1_own, _ = backward(enc1, enc1_cache, dy1)
    enc1_cross, _ = backward(enc1, enc1_cache, alpha * dy2)
    enc2_own, _ = backward(enc2, enc2_cache, dy2)
    enc2_cross, _ = backward(enc2, enc2_cache, alpha * dy1)
    return SiameseGradients(loss1, loss2, dec1_grads, dec2_grads,
                            enc1_own, enc1_cross, enc2_own, enc2_cross)


def siamese_losses(pair: TrainedPair, alpha: float, batch1: MessageBatch, batch2: MessageBatch,
                   noise1: np.ndarray, noise2: np.ndarray) -> Tuple[float, float]:
    """(L1, L2) for a fixed realization, without touching any running statistic."""
    z1, _ = forward(pair.encoder(1), batch1.one_hot, mode="train", track_running=False)
    z2, _ = forward(pair.encoder(2), batch2.one_hot, mode="train", track_running=False)
    post1, _ = forward(pair.decoder(1), superpose(z1, z2, alpha, noise1), mode="train")
    post2, _ = forward(pair.decoder(2), superpose(z2, z1, alpha, noise2), mode="train")
    return (cross_entropy_loss_and_grad(post1, batch1.indices).loss,
            cross_entropy_loss_and_grad(post2, batch2.indices).loss)


def siamese_relu_margin(pair: TrainedPair, alpha: float, batch1: MessageBatch, batch2: MessageBatch,
                        noise1: np.ndarray, noise2: np.ndarray) -> float:
    """Smallest |ReLU pre-activation| over all four networks for a fixed realization."""
    z1, _ = forward(pair.encoder(1), batch1.one_hot, mode="train", track_running=False)
    z2, _ = forward(pair.encoder(2), batch2.one_hot, mode="train", track_running=False)
    return min(relu_margin(pair.encoder(1), batch1.one_hot),
               relu_margin(pair.encoder(2), batch2.one_hot),
               relu_margin(pair.decoder(1), superpose(z1, z2, alpha, noise1)),
               relu_margin(pair.decoder(2), superpose(z2, z1, alpha, noise2)))


def siamese_cross_gradient(pair: TrainedPair, alpha: float, batch1: MessageBatch, batch2: MessageBatch,
                           noise1: np.ndarray, noise2: np.ndarray) -> Tuple[GradientSet, GradientSet]:
    """(dL2/dtheta1, dL1/dtheta2) for a fixed realization."""
    grads = siamese_gradients(pair, alpha, batch1, batch2, noise1, noise2)
    return grads.encoder1_cross, grads.encoder2_cross


def siamese_cross_check(pair: TrainedPair, alpha: float, batch1: MessageBatch, batch2: MessageBatch,
                        noise1: np.ndarray, noise2: np.ndarray, perturbation: float = 1e-5) -> float:
    """
    Central-difference check of the cross path: dL2/dtheta1 and dL1/dtheta2
    against siamese_cross_gradient. Works on a copy of the pair.
    Returns:
        max relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not perturbation > 0:
        raise UsageError("perturbation must be > 0")
    work = pair.copy()
    cross1, cross2 = siamese_cross_gradient(work, alpha, batch1, batch2, noise1, noise2)
    worst = 0.0
    # (encoder, analytic gradient, index of the other user's loss)
    for encoder, analytic, loss_index in ((work.encoder1, cross1, 1), (work.encoder2, cross2, 0)):
        for key, array in encoder.parameters().items():
            flat = array.reshape(-1)
            grad_flat = analytic[key].reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + perturbation
                plus = siamese_losses(work, alpha, batch1, batch2, noise1, noise2)[loss_index]
                flat[i] = original - perturbation
                minus = siamese_losses(work, alpha, batch1, batch2, noise1, noise2)[loss_index]
                flat[i] = original
                numeric = (plus - minus) / (2.0 * perturbation)
                worst = max(worst, abs(grad_flat[i] - numeric) / max(abs(grad_flat[i]), abs(numeric), 1e-8))
    return worst


# -------------------------------------------------------------
# Trainer
# -------------------------------------------------------------

class PairTrainer:
    """
    Runs TwinNet or SiameseNet training for one TrainingConfig.
    Single-threaded and deterministic given config.seed.
    """

    def __init__(self, config: TrainingConfig, pair: Optional[TrainedPair] = None) -> None:
        self.config = config
        self.pair = pair if pair is not None else build_pair(
            config.arch, config.seed, model_kind=config.model_kind,
            train_alpha=config.alpha, train_snr_range_db=config.snr_range_db)
        self.optimizers = {name: config.optimizer_state() for name in self.pair.networks()}
        self.rng = RngStream(config.seed).substream(STREAM_TRAIN).generator()
        self.trace = TrainingTrace()
        self.logger = logging.getLogger(self.__class__.__name__)

    def _check_loss(self, result: LossResult, user: int) -> float:
        self.trace.saturated += result.saturated
        if not np.isfinite(result.loss):
            self.logger.error(f"Non-finite loss for user {user}, aborting")
            raise TrainingDivergedError(f"Non-finite loss for user {user}", trace=self.trace)
        return result.loss

    def _step(self, name: str, grads: GradientSet) -> None:
        optimizer_step(self.pair.networks()[name], grads, self.optimizers[name])

    def twin_user_update(self, user: int, sigma: float) -> float:
        """
        One TwinNet half-step for `user`: the other encoder only supplies
        interference (batch statistics, no running-scale update, no gradient).
        """
        cfg = self.config
        other = 2 if user == 1 else 1
        own = MessageBatch.random(cfg.batch_size, cfg.arch.k, self.rng)
        interferer = MessageBatch.random(cfg.batch_size, cfg.arch.k, self.rng)
        interference, _ = forward(self.pair.encoder(other), interferer.one_hot,
                                  mode="train", track_running=False)

        encoder, decoder = self.pair.encoder(user), self.pair.decoder(user)
        z, enc_cache = forward(encoder, own.one_hot, mode="train")
        noise = awgn(cfg.batch_size, cfg.arch.n, sigma, self.rng)
        received = superpose(z, interference, cfg.alpha, noise)
        posterior, dec_cache = forward(decoder, received, mode="train")
        result = cross_entropy_loss_and_grad(posterior, own.indices)
        loss = self._check_loss(result, user)

        dec_grads, dz = backward(decoder, dec_cache, result.logit_gradient, from_logits=True)
        enc_grads, _ = backward(encoder, enc_cache, dz)
        self._step(f"encoder{user}", enc_grads)
        self._step(f"decoder{user}", dec_grads)
        return loss

    def twin_step(self, sigma: float) -> Tuple[float, float]:
        # user 1 first, then user 2 against the just-updated encoder 1
        loss1 = self.twin_user_update(1, sigma)
        loss2 = self.twin_user_update(2, sigma)
        return loss1, loss2

    def siamese_step(self, sigma: float) -> Tuple[float, float]:
        cfg = self.config
        batch1 = MessageBatch.random(cfg.batch_size, cfg.arch.k, self.rng)
        batch2 = MessageBatch.random(cfg.batch_size, cfg.arch.k, self.rng)
        noise1 = awgn(cfg.batch_size, cfg.arch.n, sigma, self.rng)
        noise2 = awgn(cfg.batch_size, cfg.arch.n, sigma, self.rng)
        grads = siamese_gradients(self.pair, cfg.alpha, batch1, batch2, noise1, noise2,
                                  track_running=True)
        loss1 = self._check_loss(grads.loss1, 1)
        loss2 = self._check_loss(grads.loss2, 2)
        self._step("decoder1", grads.decoder1)
        self._step("decoder2", grads.decoder2)
        self._step("encoder1", grads.encoder1)
        self._step("encoder2", grads.encoder2)
        return loss1, loss2

    def _check_divergence(self, strikes: int) -> int:
        trace, cfg = self.trace, self.config
        initial = (trace.loss_user1[0], trace.loss_user2[0])
        latest = (trace.loss_user1[-1], trace.loss_user2[-1])
        if any(now > cfg.divergence_factor * start for now, start in zip(latest, initial)):
            strikes += 1
        else:
            strikes = 0
        if strikes >= cfg.divergence_patience:
            message = (f"Training diverged: loss above {cfg.divergence_factor}x its first-epoch value "
                       f"for {strikes} consecutive epochs (latest {latest[0]:.4f}, {latest[1]:.4f})")
            self.logger.error(message)
            raise TrainingDivergedError(message, trace=trace)
        return strikes

    def run(self) -> Tuple[TrainedPair, TrainingTrace]:
        cfg = self.config
        step = self.twin_step if cfg.model_kind == "twin" else self.siamese_step
        self.logger.info(f"Training {cfg.model_kind} pair: alpha={cfg.alpha}, k={cfg.arch.k}, n={cfg.arch.n}, "
                         f"{cfg.epochs} epochs x {cfg.batches_per_epoch} batches x {cfg.batch_size}, seed={cfg.seed}")
        started = time.perf_counter()
        strikes = 0
        for epoch in range(cfg.epochs):
            learning_rate = cfg.learning_rate_at(epoch)
            for state in self.optimizers.values():
                state.learning_rate = learning_rate
            totals = [0.0, 0.0]
            for batch in range(cfg.batches_per_epoch):
                eb_n0_db = sample_snr(cfg.snr_range_db, self.rng)
                self.trace.eb_n0_log.append(eb_n0_db)
                try:
                    loss1, loss2 = step(noise_sigma(eb_n0_db, cfg.arch.rate))
                except TrainingDivergedError:
                    raise
                except NumericalError as e:
                    self.logger.error(f"Numerical failure in epoch {epoch + 1} batch {batch + 1}: {e}")
                    raise TrainingDivergedError(f"Training aborted in epoch {epoch + 1}: {e}",
                                                trace=self.trace) from e
                totals[0] += loss1
                totals[1] += loss2
                self.logger.debug(f"epoch {epoch + 1} batch {batch + 1}: Eb/N0={eb_n0_db:.2f} dB "
                                  f"L1={loss1:.5f} L2={loss2:.5f}")
            self.trace.loss_user1.append(totals[0] / cfg.batches_per_epoch)
            self.trace.loss_user2.append(totals[1] / cfg.batches_per_epoch)
            self.logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: L1={self.trace.loss_user1[-1]:.5f} "
                             f"L2={self.trace.loss_user2[-1]:.5f} lr={learning_rate:.1e}")
            strikes = self._check_divergence(strikes)

        calibrate_power(self.pair)
        self.pair.trained = True
        self.trace.duration_s = time.perf_counter() - started
        if self.trace.saturated:
            self.logger.warning(f"{self.trace.saturated} saturated target probabilities during training")
        self.logger.info(f"✅ Training finished in {self.trace.duration_s:.1f} s")
        return self.pair, self.trace


def train_twinnet(config: TrainingConfig) -> Tuple[TrainedPair, TrainingTrace]:
    """Alternating TwinNet training (user 1 then user 2 in every batch)."""
    if config.model_kind != "twin":
        raise UsageError(f"train_twinnet needs model_kind 'twin', got '{config.model_kind}'")
    return PairTrainer(config).run()


def train_siamesenet(config: TrainingConfig) -> Tuple[TrainedPair, TrainingTrace]:
    """Joint-gradient SiameseNet training."""
    if config.model_kind != "siamese":
        raise UsageError(f"train_siamesenet needs model_kind 'siamese', got '{config.model_kind}'")
    return PairTrainer(config).run()


def train_pair(config: TrainingConfig) -> Tuple[TrainedPair, TrainingTrace]:
    if config.model_kind == "twin":
        return train_twinnet(config)
    return train_siamesenet(config)
