"""
export_codebook.py

Export both users' codebooks of a saved model to CSV.

Usage:
    python export_codebook.py MODEL [output_csv]

- Loads and verifies the model file (read-only)
- Writes one row per (user, message): user, message, z0..z{n-1}, power
- Default output: output/codebook.csv
"""
import logging
import os
import sys
# Ensure project root is in sys.path for imports
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from errors import IfcaeError
from model_io import load_model
from models import USERS, TrainedPair, extract_codebook
from reports import write_csv


def codebook_columns(n: int) -> list:
    return ["user", "message"] + [f"z{i}" for i in range(n)] + ["power"]


def codebook_rows(pair: TrainedPair) -> list:
    rows = []
    for user in USERS:
        book = extract_codebook(pair, user)
        powers = book.row_powers()
        for message, codeword in enumerate(book.matrix):
            row = {"user": user, "message": message, "power": float(powers[message])}
            row.update({f"z{i}": float(v) for i, v in enumerate(codeword)})
            rows.append(row)
    return rows


def export_codebook(model_path: str, output_csv: str) -> None:
    pair = load_model(model_path)
    write_csv(output_csv, codebook_columns(pair.arch.n), codebook_rows(pair))


def main():
    if len(sys.argv) < 2:
        print("Usage: python export_codebook.py MODEL [output_csv]")
        sys.exit(2)
    model_path = sys.argv[1]
    output_csv = sys.argv[2] if len(sys.argv) > 2 else "output/codebook.csv"
    try:
        export_codebook(model_path, output_csv)
    except IfcaeError as e:
        print(f"❌ error: {e.category}: {e}")
        sys.exit(e.exit_code)
    print(f"✅ Codebooks written to {output_csv}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s [%(levelname)s] %(name)s: %(message)s')
    main()
