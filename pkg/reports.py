"""
reports.py

Result files written by the CLI. Every CSV has a fixed column order and
header; every file is written to a temp file and renamed into place.
"""

import csv
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

from evaluation import SweepResult, q_function, tdma_bpsk_bler
from latent_analysis import AnalysisReport
from training import TrainingTrace


TRACE_COLUMNS = ["epoch", "loss_user1", "loss_user2"]
BLER_COLUMNS = ["model_kind", "train_alpha", "eval_alpha", "eb_n0_db", "frames", "errors_u1", "errors_u2",
                "bler_u1", "bler_u2", "bler_tdma_analytic"]
BASELINE_COLUMNS = ["k", "eb_n0_db", "ber_analytic", "bler_tdma_analytic"]
DISTANCE_COLUMNS = ["set", "rank", "distance"]
CORRELATION_COLUMNS = ["matrix", "row", "col", "value"]

TDMA_CONVENTION = ("TDMA baseline: k uncoded BPSK bits per block on the same Eb/N0 axis, "
                   "BER = Q(sqrt(2 Eb/N0)), BLER = 1 - (1 - BER)^k; no power boost during a user's slot")

PathLike = Union[str, Path]

logger = logging.getLogger("Reports")


def _atomic_write(path: PathLike, write) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}-", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(handle, "w", newline="", encoding="utf-8") as f:
            write(f)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    rows = list(rows)

    def write(f):
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    _atomic_write(path, write)
    logger.info(f"📄 Wrote {len(rows)} row(s) to {path}")
    return Path(path)


def write_json(path: PathLike, document: Dict[str, Any]) -> Path:
    def write(f):
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")

    _atomic_write(path, write)
    logger.info(f"📄 Wrote {path}")
    return Path(path)


# ---- Training ----

def write_trace_csv(trace: TrainingTrace, path: PathLike) -> Path:
    return write_csv(path, TRACE_COLUMNS, trace.rows())


# ---- BLER ----

def bler_rows(sweep: SweepResult, k: int) -> List[Dict[str, Any]]:
    rows = []
    for point in sorted(sweep.points, key=lambda p: (p.alpha_eval, p.eb_n0_db)):
        rows.append({
            "model_kind": sweep.model_kind,
            "train_alpha": sweep.train_alpha,
            "eval_alpha": point.alpha_eval,
            "eb_n0_db": point.eb_n0_db,
            "frames": point.frames,
            "errors_u1": point.errors_user1,
            "errors_u2": point.errors_user2,
            "bler_u1": point.bler_user1,
            "bler_u2": point.bler_user2,
            "bler_tdma_analytic": tdma_bpsk_bler(point.eb_n0_db, k),
        })
    return rows


def write_bler_csv(sweep: SweepResult, k: int, path: PathLike) -> Path:
    return write_csv(path, BLER_COLUMNS, bler_rows(sweep, k))


def baseline_rows(snrs_db: Sequence[float], k: int) -> List[Dict[str, Any]]:
    return [{"k": k, "eb_n0_db": float(snr),
             "ber_analytic": q_function((2.0 * 10.0 ** (float(snr) / 10.0)) ** 0.5),
             "bler_tdma_analytic": tdma_bpsk_bler(float(snr), k)}
            for snr in snrs_db]


def write_baseline_csv(snrs_db: Sequence[float], k: int, path: PathLike) -> Path:
    return write_csv(path, BASELINE_COLUMNS, baseline_rows(snrs_db, k))


# ---- Latent analysis ----

def write_distances_csv(report: AnalysisReport, path: PathLike) -> Path:
    rows = []
    for name, values in (("self_user1", report.distances.self_user1),
                         ("self_user2", report.distances.self_user2),
                         ("cross", report.distances.cross)):
        rows.extend({"set": name, "rank": rank, "distance": float(value)} for rank, value in enumerate(values))
    return write_csv(path, DISTANCE_COLUMNS, rows)


def write_correlations_csv(report: AnalysisReport, path: PathLike) -> Path:
    rows = []
    for name, matrix in (("cross", report.correlations.cross),
                         ("self_user1", report.correlations.self_user1),
                         ("self_user2", report.correlations.self_user2)):
        for row in range(matrix.shape[0]):
            for col in range(matrix.shape[1]):
                rows.append({"matrix": name, "row": row, "col": col, "value": float(matrix[row, col])})
    return write_csv(path, CORRELATION_COLUMNS, rows)
