"""
check_gradients.py

Finite-difference check of every layer kind, both full network compositions
and the SiameseNet cross path over a number of random seeds.

Usage:
    python check_gradients.py [num_seeds] [tolerance]

- Builds small random networks per seed, redrawing until every ReLU input is at
  least 1e-3 away from zero
- Compares analytic gradients with central differences (perturbation 1e-5)
- Prints a pass/fail table and exits non-zero if any case exceeds the tolerance
"""
import logging
import os
import sys
from typing import Callable, Tuple
# Ensure project root is in sys.path for imports
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from channel import STREAM_HARNESS, RngStream, awgn
from errors import NumericalError
from models import ArchitectureSpec, MessageBatch, build_pair
from nn_core import build_network, finite_difference_check, relu_margin
from training import siamese_cross_check, siamese_relu_margin

DEFAULT_SEEDS = 20
DEFAULT_TOLERANCE = 1e-4
# every ReLU pre-activation stays this far from the kink under central differences
RELU_MARGIN = 1e-3
MAX_DRAWS = 1000

# (case name, blueprint, input width, power mode)
LAYER_CASES = [
    ("dense", [("dense", 3)], 4, "batch_average"),
    ("relu", [("dense", 5), ("relu", 0), ("dense", 3)], 4, "batch_average"),
    ("linear", [("dense", 4), ("linear", 0), ("dense", 3)], 3, "batch_average"),
    ("softmax", [("dense", 4), ("softmax", 0)], 3, "batch_average"),
    ("power_norm_batch", [("dense", 5), ("batch_power_norm", 0)], 4, "batch_average"),
    ("power_norm_codeword", [("dense", 5), ("batch_power_norm", 0)], 4, "per_codeword"),
]
SMALL_ARCH = ArchitectureSpec(k=2, n=4, encoder_hidden=6, decoder_hidden=6)
CROSS_ALPHA = 0.7
CROSS_SIGMA = 0.5

logger = logging.getLogger("CheckGradients")


def draw_until_smooth(draw: Callable[[], Tuple], margin: Callable[..., float], what: str) -> Tuple:
    """Repeat draw() until margin(*drawn) >= RELU_MARGIN."""
    for attempt in range(MAX_DRAWS):
        drawn = draw()
        if margin(*drawn) >= RELU_MARGIN:
            if attempt:
                logger.debug(f"{what}: accepted draw {attempt + 1}")
            return drawn
    raise NumericalError(f"{what}: no draw kept ReLU inputs {RELU_MARGIN:g} away from zero")


def check_seed(seed: int) -> dict:
    """Max relative error per case for one seed."""
    stream = RngStream(seed).substream(STREAM_HARNESS)
    rng = stream.generator()
    errors = {}
    for name, blueprint, width, power_mode in LAYER_CASES:
        net, x = draw_until_smooth(
            lambda: (build_network(blueprint, width, rng, power_mode=power_mode), rng.standard_normal((6, width))),
            relu_margin, name)
        targets = rng.integers(0, net.out_width, size=6)
        errors[name] = finite_difference_check(net, x, targets)

    pair_seeds = iter([seed] + [int(s) for s in rng.integers(0, 2 ** 31, size=MAX_DRAWS)])
    pair, messages = draw_until_smooth(
        lambda: (build_pair(SMALL_ARCH, next(pair_seeds)), MessageBatch.random(8, SMALL_ARCH.k, rng)),
        lambda p, m: relu_margin(p.encoder1, m.one_hot), "encoder")
    errors["encoder"] = finite_difference_check(pair.encoder1, messages.one_hot, messages.indices)
    (received,) = draw_until_smooth(lambda: (rng.standard_normal((8, SMALL_ARCH.n)),),
                                    lambda y: relu_margin(pair.decoder1, y), "decoder")
    errors["decoder"] = finite_difference_check(pair.decoder1, received, messages.indices)

    def cross_draw():
        return (build_pair(SMALL_ARCH, next(pair_seeds)), CROSS_ALPHA,
                MessageBatch.random(8, SMALL_ARCH.k, rng), MessageBatch.random(8, SMALL_ARCH.k, rng),
                awgn(8, SMALL_ARCH.n, CROSS_SIGMA, rng), awgn(8, SMALL_ARCH.n, CROSS_SIGMA, rng))

    errors["siamese_cross_path"] = siamese_cross_check(*draw_until_smooth(cross_draw, siamese_relu_margin,
                                                                           "siamese_cross_path"))
    return errors


def main():
    num_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_SEEDS
    tolerance = float(sys.argv[2]) if len(sys.argv) > 2 else DEFAULT_TOLERANCE
    print(f"🚀 Gradient check over {num_seeds} seeds (tolerance {tolerance:g})")
    worst = {}
    for seed in range(num_seeds):
        for name, error in check_seed(seed).items():
            worst[name] = max(worst.get(name, 0.0), error)
    failed = False
    print(f"{'case':<22}{'max rel. error':>16}  result")
    print("-" * 48)
    for name, error in worst.items():
        ok = error < tolerance
        failed = failed or not ok
        print(f"{name:<22}{error:>16.3e}  {'✅' if ok else '❌'}")
    if failed:
        print("❌ Some gradients disagree with finite differences")
        sys.exit(1)
    print("✅ All gradients match")


if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s [%(levelname)s] %(name)s: %(message)s')
    main()
