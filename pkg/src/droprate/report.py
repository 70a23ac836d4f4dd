"""Comparison report artifacts: markdown table, combined CSV, JSON summary."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .svgplot import COMBINED_HEADER
from .trainer import MetricsRecord


@dataclass(frozen=True)
class CompareRow:
    """One schedule's results: final train loss, best val loss,
    total train time in minutes, average inference speed in tokens/sec."""

    schedule: str
    ftl: float
    bvl: float
    ttt_minutes: float
    ais: float


@dataclass
class ComparisonReport:
    rows: list[CompareRow]
    aborted: str | None = None  # set when a run diverged and the report is partial

    def markdown(self) -> str:
        lines = ["| Schedule | FTL | BVL | TTT | AIS |", "| --- | --- | --- | --- | --- |"]
        for r in self.rows:
            lines.append(f"| {r.schedule} | {r.ftl:.4f} | {r.bvl:.4f} | {r.ttt_minutes:.2f} | {r.ais:.2f} |")
        text = "\n".join(lines) + "\n"
        if self.aborted:
            text += f"\nABORTED: {self.aborted}; table above covers completed runs only.\n"
        return text

    def to_json(self) -> str:
        payload = {
            "aborted": self.aborted,
            "rows": [
                {"schedule": r.schedule, "ftl": r.ftl, "bvl": r.bvl, "ttt_minutes": r.ttt_minutes, "ais": r.ais}
                for r in self.rows
            ],
        }
        return json.dumps(payload, indent=2) + "\n"


def write_combined_csv(path: str | Path, per_schedule: dict[str, list[MetricsRecord]]) -> None:
    """Long-format metrics for plotting: one row per (schedule, evaluation)."""
    lines = [",".join(COMBINED_HEADER)]
    for label, records in per_schedule.items():
        for r in records:
            lines.append(f"{label},{r.iter},{r.train_loss:.4f},{r.val_loss:.4f},{r.dropout_p!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
