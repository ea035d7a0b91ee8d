"""Comparison reports over evaluation CSVs.

Reads the aggregate row of each run's eval CSV and emits a side-by-side
table, as Markdown for reading and as CSV for further processing. The
first run listed is the reference for the delta column.
"""

from __future__ import annotations

import csv
from pathlib import Path

REPORT_CSV_HEADER = "run,mean_j,mean_f,g,delta_g"


def read_eval_summary(path):
    """Mean J/F/G from one eval CSV's aggregate row."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"eval csv not found: {path}")
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["video_id", "object_id", "frame", "j", "f"]:
            raise ValueError(f"{path}: unrecognized eval csv header {header}")
        scored = 0
        for row in reader:
            if row and row[0] == "aggregate":
                mean_j, mean_f = float(row[3]), float(row[4])
                return {"mean_j": mean_j, "mean_f": mean_f,
                        "g": 0.5 * (mean_j + mean_f), "scored_rows": scored}
            scored += 1
    raise ValueError(f"{path}: missing aggregate row")


def build_report(entries):
    """entries: list of (run_name, eval_csv_path). Returns (markdown, csv)."""
    if not entries:
        raise ValueError("no runs to report")
    summaries = [(name, read_eval_summary(path)) for name, path in entries]
    base_g = summaries[0][1]["g"]

    md = ["| run | J | F | G | dG vs " + summaries[0][0] + " |",
          "|---|---|---|---|---|"]
    csv_lines = [REPORT_CSV_HEADER]
    for name, s in summaries:
        delta = s["g"] - base_g
        md.append(f"| {name} | {s['mean_j']:.4f} | {s['mean_f']:.4f} | {s['g']:.4f} | {delta:+.4f} |")
        csv_lines.append(f"{name},{s['mean_j']:.6f},{s['mean_f']:.6f},{s['g']:.6f},{delta:+.6f}")
    markdown = "# Run comparison\n\n" + "\n".join(md) + "\n"
    return markdown, "\n".join(csv_lines) + "\n"


def write_report(out_dir, entries):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    markdown, csv_text = build_report(entries)
    (out / "report.md").write_text(markdown)
    (out / "report.csv").write_text(csv_text)
    return out / "report.md", out / "report.csv"
