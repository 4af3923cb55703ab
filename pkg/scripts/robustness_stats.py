"""Std dev and best-vs-worst gap for per-position recall rows.

Reads JSONL rows ``{"label", "recalls", "reported_std"?, "reported_gap_pct"?}``
and prints computed values next to the reported ones.

    python3 scripts/robustness_stats.py tests/fixtures/position_thirds.jsonl tests/fixtures/position_deciles.jsonl
"""

import argparse
import json

from progressive_grounding.evaluation import RobustnessRow, render_robustness, robustness_table


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("files", nargs="+")
    args = p.parse_args()
    for path in args.files:
        with open(path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        table = robustness_table([
            RobustnessRow(r["label"], r["recalls"], r.get("reported_std"), r.get("reported_gap_pct")) for r in rows
        ])
        print(f"== {path}")
        print(render_robustness(table))


if __name__ == "__main__":
    main()
