"""CSV emission for search results and merged evaluation summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .evaluation import EvalReport

SEARCH_COLUMNS = ("rank", "sample", "score", "config")
SUMMARY_COLUMNS = ("label", "lanes", "n", "mean", "std", "count")


def emit_search_csv(results: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SEARCH_COLUMNS)
        for r in results:
            writer.writerow((r["rank"], r["sample"], repr(r["score"]), json.dumps(r["config"], sort_keys=True)))


def read_search_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"rank": int(r["rank"]), "sample": int(r["sample"]), "score": float(r["score"]),
                 "config": json.loads(r["config"])} for r in csv.DictReader(fh)]


def summarize(reports: dict[str, EvalReport]) -> list[tuple]:
    """Aggregate rows ``(label, lanes, n, mean, std, count)`` for several labelled reports."""
    rows = []
    for label in sorted(reports):
        for n, lanes, mean, std, count in reports[label].aggregates():
            rows.append((label, lanes, n, mean, std, count))
    return rows


def emit_summary_csv(reports: dict[str, EvalReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for label, lanes, n, mean, std, count in summarize(reports):
            writer.writerow((label, lanes, n, repr(mean), repr(std), count))


def write_metadata(path: str | Path, meta: dict) -> Path:
    """Sidecar ``<path>.meta.json`` describing how an output was produced."""
    out = Path(str(path) + ".meta.json")
    out.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out
