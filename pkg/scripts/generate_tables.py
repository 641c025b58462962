"""Regenerate the cardinality tables shipped as package data.

Footrule, Spearman and Ulam have no closed-form partition function, so
tables for m = 1..12 are shipped with the package. Counts come from the
exact recurrences in mallows_smc2.cardinality; run the test suite after
regenerating (the recurrences are checked against brute force there).
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from mallows_smc2.cardinality import exact_cardinality_table, write_cardinality_table
from mallows_smc2.rankings import Distance

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "mallows_smc2" / "tables"
MAX_M = 12


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for kind in (Distance.FOOTRULE, Distance.SPEARMAN, Distance.ULAM):
        for m in range(1, MAX_M + 1):
            table = exact_cardinality_table(m, kind)
            path = OUT / f"{kind.label}_{m}.txt"
            write_cardinality_table(table, path)
            print(f"wrote {path} ({len(table.counts)} rows)")


if __name__ == "__main__":
    main()
