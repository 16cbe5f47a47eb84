"""
latent_analysis.py

Codeword geometry of a trained pair:
- d_self: distances between two messages of the same user
- d_cross: distances between user-1 and user-2 codewords (all 2^k x 2^k pairs)
- normalized (cosine) correlations within and across codebooks
Sums run over the n codeword dimensions in index order, one dimension at a
time, so results agree bit-for-bit with a plain double loop.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from errors import DegenerateCodewordError, UsageError
from models import CodeBook, TrainedPair, extract_codebook


NEAR_ZERO_CORRELATION = 0.05

logger = logging.getLogger("LatentAnalysis")


def _sequential_squared_distance(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    total = np.zeros(rows_a.shape[0])
    for d in range(rows_a.shape[1]):
        diff = rows_a[:, d] - rows_b[:, d]
        total += diff * diff
    return total


def _sequential_dot(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    total = np.zeros(rows_a.shape[0])
    for d in range(rows_a.shape[1]):
        total += rows_a[:, d] * rows_b[:, d]
    return total


def self_distances(codebook: CodeBook) -> np.ndarray:
    """Sorted Euclidean distances over all unordered message pairs of one codebook."""
    if codebook.message_count < 2:
        raise UsageError("self_distances needs a codebook with at least 2 rows")
    i, j = np.triu_indices(codebook.message_count, k=1)
    matrix = codebook.matrix
    return np.sort(np.sqrt(_sequential_squared_distance(matrix[i], matrix[j])))


def cross_distances(cb1: CodeBook, cb2: CodeBook) -> np.ndarray:
    """Sorted Euclidean distances over every (user-1 message, user-2 message) pair."""
    if cb1.n != cb2.n:
        raise UsageError(f"Codeword widths differ: {cb1.n} vs {cb2.n}")
    i, j = np.meshgrid(np.arange(cb1.message_count), np.arange(cb2.message_count), indexing="ij")
    return np.sort(np.sqrt(_sequential_squared_distance(cb1.matrix[i.ravel()], cb2.matrix[j.ravel()])))


def _row_norms(codebook: CodeBook, label: str) -> np.ndarray:
    norms = np.sqrt(_sequential_dot(codebook.matrix, codebook.matrix))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        index = int(zero[0])
        logger.error(f"Codeword {index} of {label} has zero norm")
        raise DegenerateCodewordError(f"Codeword for message {index} of {label} has zero norm",
                                      message_index=index)
    return norms


def correlations(cb_a: CodeBook, cb_b: CodeBook) -> np.ndarray:
    """
    Matrix of cosine correlations: entry (i, j) = <a_i, b_j> / (||a_i|| ||b_j||), clipped to [-1, 1].
    Raises:
        UsageError: codeword widths differ.
        DegenerateCodewordError: a codeword has zero norm.
    """
    if cb_a.n != cb_b.n:
        raise UsageError(f"Codeword widths differ: {cb_a.n} vs {cb_b.n}")
    norms_a = _row_norms(cb_a, "first codebook")
    norms_b = _row_norms(cb_b, "second codebook")
    i, j = np.meshgrid(np.arange(cb_a.message_count), np.arange(cb_b.message_count), indexing="ij")
    i, j = i.ravel(), j.ravel()
    dots = _sequential_dot(cb_a.matrix[i], cb_b.matrix[j])
    values = np.clip(dots / (norms_a[i] * norms_b[j]), -1.0, 1.0)
    return values.reshape(cb_a.message_count, cb_b.message_count)


@dataclass
class DistanceReport:
    self_user1: np.ndarray
    self_user2: np.ndarray
    cross: np.ndarray

    @property
    def self_all(self) -> np.ndarray:
        return np.sort(np.concatenate([self.self_user1, self.self_user2]))

    @property
    def min_self(self) -> float:
        return float(min(self.self_user1[0], self.self_user2[0]))

    @property
    def min_cross(self) -> float:
        return float(self.cross[0])

    def summary(self) -> Dict[str, float]:
        stats = {}
        for name, values in (("d_self_user1", self.self_user1), ("d_self_user2", self.self_user2),
                             ("d_cross", self.cross)):
            stats[f"{name}_min"] = float(values.min())
            stats[f"{name}_max"] = float(values.max())
            stats[f"{name}_mean"] = float(values.mean())
        return stats


def _off_diagonal(matrix: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(matrix.shape[0], k=1)
    return matrix[i, j]


@dataclass
class CorrelationReport:
    cross: np.ndarray
    self_user1: np.ndarray
    self_user2: np.ndarray

    @property
    def cross_range(self) -> Tuple[float, float]:
        return float(self.cross.min()), float(self.cross.max())

    @property
    def max_abs_cross(self) -> float:
        return float(np.abs(self.cross).max())

    def self_range(self, user: int) -> Tuple[float, float]:
        """Range of R_self over distinct message pairs."""
        values = _off_diagonal(self.self_user1 if user == 1 else self.self_user2)
        return float(values.min()), float(values.max())

    def near_zero_self_pairs(self, user: int, threshold: float = NEAR_ZERO_CORRELATION) -> int:
        values = _off_diagonal(self.self_user1 if user == 1 else self.self_user2)
        return int(np.count_nonzero(np.abs(values) < threshold))


@dataclass
class AnalysisReport:
    model_kind: str
    train_alpha: float
    k: int
    n: int
    distances: DistanceReport
    correlations: CorrelationReport

    def summary(self) -> Dict[str, object]:
        """Flat summary in the shape of the pairwise-distance table plus correlation statistics."""
        summary: Dict[str, object] = {
            "model_kind": self.model_kind,
            "train_alpha": self.train_alpha,
            "k": self.k,
            "n": self.n,
            "min_d_cross": self.distances.min_cross,
            "min_d_self": self.distances.min_self,
        }
        summary.update(self.distances.summary())
        summary["r_cross_min"], summary["r_cross_max"] = self.correlations.cross_range
        summary["r_cross_max_abs"] = self.correlations.max_abs_cross
        for user in (1, 2):
            low, high = self.correlations.self_range(user)
            summary[f"r_self_user{user}_min"] = low
            summary[f"r_self_user{user}_max"] = high
            summary[f"r_self_user{user}_near_zero_pairs"] = self.correlations.near_zero_self_pairs(user)
        summary["near_zero_threshold"] = NEAR_ZERO_CORRELATION
        return summary


def analysis_report(pair: TrainedPair) -> AnalysisReport:
    """Distances and correlations of both clean (infer-mode) codebooks."""
    cb1 = extract_codebook(pair, 1)
    cb2 = extract_codebook(pair, 2)
    distances = DistanceReport(self_distances(cb1), self_distances(cb2), cross_distances(cb1, cb2))
    corr = CorrelationReport(correlations(cb1, cb2), correlations(cb1, cb1), correlations(cb2, cb2))
    report = AnalysisReport(pair.model_kind, pair.train_alpha, pair.arch.k, pair.arch.n, distances, corr)
    logger.info(f"{pair.model_kind} alpha={pair.train_alpha}: min d_cross={distances.min_cross:.3f}, "
                f"min d_self={distances.min_self:.3f}, max |R_cross|={corr.max_abs_cross:.3f}")
    return report
