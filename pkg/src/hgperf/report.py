"""Results files and the GNN-vs-RF comparison table."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hetgraph import GraphSpec

RESULT_COLUMNS = [
    "model", "family", "dimension", "budget_multiplier", "repetition", "outer_fold", "hyperparams", "mse",
]
TABLE_GROUPS = [("modCMA", 5, "CMA-ES 5D"), ("modCMA", 30, "CMA-ES 30D"), ("modDE", 5, "DE 5D"), ("modDE", 30, "DE 30D")]


@dataclass(frozen=True)
class ResultRow:
    model: str
    family: str
    dimension: int
    budget_multiplier: int
    repetition: int
    outer_fold: int
    hyperparams: str
    mse: float

    @property
    def key(self):
        return (self.family, self.dimension, self.budget_multiplier, self.repetition, self.outer_fold)

    def as_list(self):
        return [
            self.model, self.family, self.dimension, self.budget_multiplier,
            self.repetition, self.outer_fold, self.hyperparams, repr(float(self.mse)),
        ]

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["model"], d["family"], int(d["dimension"]), int(d["budget_multiplier"]),
            int(d["repetition"]), int(d["outer_fold"]), d["hyperparams"], float(d["mse"]),
        )


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_results(rows, path) -> None:
    rows = sorted(rows, key=lambda r: (r.model,) + r.key)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.as_list())
    atomic_write(path, buf.getvalue())


def read_results(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [ResultRow.from_dict(d) for d in csv.DictReader(fh)]


def summarize(rows) -> dict:
    """Mean MSE per (family, dimension, budget) over folds and repetitions."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.family, r.dimension, r.budget_multiplier)].append(r.mse)
    return {
        GraphSpec(d, b, f).slug: {
            "family": f,
            "dimension": d,
            "budget_multiplier": b,
            "mean_mse": float(np.mean(v)),
            "n_folds": len(v),
        }
        for (f, d, b), v in sorted(groups.items())
    }


def write_summary(rows, path) -> None:
    atomic_write(path, json.dumps(summarize(rows), indent=2, sort_keys=True) + "\n")


def relative_improvement(gnn: float, rf: float) -> float:
    """Percent reduction of the GNN's MSE relative to RF's."""
    return 100.0 * (rf - gnn) / rf


@dataclass(frozen=True)
class Cell:
    gnn: float | None
    rf: float | None

    @property
    def complete(self) -> bool:
        return self.gnn is not None and self.rf is not None

    @property
    def winner(self) -> str:
        """'GNN', 'RF' or 'tie', compared at the two decimals the table shows."""
        if not self.complete:
            return ""
        g, r = round(self.gnn, 2), round(self.rf, 2)
        return "tie" if g == r else ("GNN" if g < r else "RF")

    @property
    def improvement(self) -> float | None:
        return relative_improvement(self.gnn, self.rf) if self.complete and self.rf != 0 else None


@dataclass
class ComparisonTable:
    budgets: list
    cells: dict  # (family, dimension, budget) -> Cell
    gaps: list

    def to_markdown(self) -> str:
        head = "| Budget | " + " | ".join(f"{lab} GNN | {lab} RF" for _, _, lab in TABLE_GROUPS) + " |"
        lines = [head, "|" + "---|" * (1 + 2 * len(TABLE_GROUPS))]
        for b in self.budgets:
            row = [f"{b}D"]
            for f, d, _ in TABLE_GROUPS:
                c = self.cells.get((f, d, b), Cell(None, None))
                win = c.winner
                for model, v in (("GNN", c.gnn), ("RF", c.rf)):
                    if v is None:
                        row.append("n/a")
                    else:
                        text = f"{v:.2f}"
                        row.append(f"**{text}**" if win in (model, "tie") else text)
            lines.append("| " + " | ".join(row) + " |")

        lines += ["", "Relative MSE improvement of GNN over RF (%):", ""]
        lines.append("| Budget | " + " | ".join(lab for _, _, lab in TABLE_GROUPS) + " |")
        lines.append("|" + "---|" * (1 + len(TABLE_GROUPS)))
        for b in self.budgets:
            row = [f"{b}D"]
            for f, d, _ in TABLE_GROUPS:
                c = self.cells.get((f, d, b), Cell(None, None))
                imp = c.improvement
                row.append("n/a" if imp is None else f"{imp:.1f}" + (" (tie)" if c.winner == "tie" else ""))
            lines.append("| " + " | ".join(row) + " |")
        if self.gaps:
            lines += ["", "Missing results:"] + [f"- {g}" for g in self.gaps]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "dimension", "budget_multiplier", "gnn_mse", "rf_mse", "winner", "relative_improvement_pct"])
        for (f, d, b), c in sorted(self.cells.items()):
            w.writerow([
                f, d, b,
                "" if c.gnn is None else repr(c.gnn),
                "" if c.rf is None else repr(c.rf),
                c.winner,
                "" if c.improvement is None else repr(c.improvement),
            ])
        return buf.getvalue()


def build_table(gnn_rows, rf_rows, specs=None) -> ComparisonTable:
    """Compare per-setting mean MSEs; settings lacking either model are listed as gaps."""
    gnn = {(v["family"], v["dimension"], v["budget_multiplier"]): v["mean_mse"] for v in summarize(gnn_rows).values()}
    rf = {(v["family"], v["dimension"], v["budget_multiplier"]): v["mean_mse"] for v in summarize(rf_rows).values()}
    keys = set(gnn) | set(rf)
    if specs is not None:
        keys |= {(s.family, s.dimension, s.budget_multiplier) for s in specs}
    cells, gaps = {}, []
    for k in sorted(keys):
        cells[k] = Cell(gnn.get(k), rf.get(k))
        missing = [m for m, src in (("GNN", gnn), ("RF", rf)) if k not in src]
        if missing:
            gaps.append(f"{GraphSpec(k[1], k[2], k[0]).slug}: no {' or '.join(missing)} results")
    budgets = sorted({k[2] for k in keys})
    return ComparisonTable(budgets, cells, gaps)
