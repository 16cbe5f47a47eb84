"""
build_distance_table.py

Merge several analysis_summary.json files (written by `main.py analyze`) into
one pairwise-distance table.

Usage:
    python build_distance_table.py OUTPUT_CSV SUMMARY_JSON [SUMMARY_JSON ...]

- One row per (model kind, statistic): min d_cross and min d_self
- One column per training alpha, in ascending order
- Missing combinations are left empty
"""
import json
import logging
import os
import sys
# Ensure project root is in sys.path for imports
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from reports import write_csv

STATISTICS = ("min_d_cross", "min_d_self")

logger = logging.getLogger("DistanceTable")


def load_summaries(paths):
    summaries = []
    for path in paths:
        with open(path, encoding="utf-8") as f:
            summary = json.load(f)
        missing = [key for key in ("model_kind", "train_alpha") + STATISTICS if key not in summary]
        if missing:
            raise ValueError(f"{path} is missing {', '.join(missing)}")
        summaries.append(summary)
    return summaries


def build_table(summaries):
    """Returns (columns, rows) of the merged table."""
    alphas = sorted({float(s["train_alpha"]) for s in summaries})
    columns = ["model_kind", "statistic"] + [f"alpha={alpha:g}" for alpha in alphas]
    cells = {}
    for s in summaries:
        for statistic in STATISTICS:
            key = (s["model_kind"], statistic, float(s["train_alpha"]))
            if key in cells:
                logger.warning(f"Duplicate summary for {key}; keeping the last one")
            cells[key] = s[statistic]
    rows = []
    for kind in sorted({s["model_kind"] for s in summaries}):
        for statistic in STATISTICS:
            row = {"model_kind": kind, "statistic": statistic}
            for alpha in alphas:
                value = cells.get((kind, statistic, alpha))
                row[f"alpha={alpha:g}"] = "" if value is None else f"{value:.2f}"
            rows.append(row)
    return columns, rows


def main():
    if len(sys.argv) < 3:
        print("Usage: python build_distance_table.py OUTPUT_CSV SUMMARY_JSON [SUMMARY_JSON ...]")
        sys.exit(2)
    output_csv, paths = sys.argv[1], sys.argv[2:]
    try:
        columns, rows = build_table(load_summaries(paths))
    except (OSError, ValueError) as e:
        print(f"❌ {e}")
        sys.exit(1)
    write_csv(output_csv, columns, rows)
    print(f"✅ Distance table with {len(rows)} rows written to {output_csv}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s [%(levelname)s] %(name)s: %(message)s')
    main()
