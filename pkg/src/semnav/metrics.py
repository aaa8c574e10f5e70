"""Success rate and success weighted by path length."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

OUTCOME_ORDER = ("Success", "FalsePositive", "NoFrontier", "Stepout", "NoTarget")


@dataclass(frozen=True)
class Metrics:
    n: int
    sr: float
    spl: float
    counts: dict = field(default_factory=dict)
    mean_steps: float = 0.0
    mean_discovery: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.spl <= self.sr + 1e-12 <= 1.0 + 1e-12:
            raise ValueError(f"metrics out of order: spl={self.spl}, sr={self.sr}")


def spl_term(success: bool, shortest: float, actual: float) -> float:
    """``S * l_s / max(l_s, l_a)``; a success with both lengths zero counts 1."""
    if not success:
        return 0.0
    denom = max(shortest, actual)
    if denom <= 0.0:
        return 1.0
    if math.isinf(shortest):
        return 0.0
    return shortest / denom


def compute_metrics(results) -> Metrics:
    results = list(results)
    if not results:
        raise ValueError("need at least one result")
    n = len(results)
    successes = sum(1 for r in results if r.success)
    spl = math.fsum(spl_term(r.success, r.shortest_length, r.actual_length) for r in results) / n
    counts = {k: 0 for k in OUTCOME_ORDER}
    for r in results:
        counts[r.outcome] = counts.get(r.outcome, 0) + 1
    return Metrics(n, successes / n, spl, counts,
                   sum(r.steps for r in results) / n,
                   sum(r.steps_to_discovery for r in results) / n)


def metrics_rows(named: dict) -> list[dict]:
    rows = []
    for name, m in named.items():
        row = {"policy": name, "episodes": m.n, "sr": f"{m.sr:.6f}", "spl": f"{m.spl:.6f}",
               "mean_steps": f"{m.mean_steps:.3f}", "mean_discovery": f"{m.mean_discovery:.3f}"}
        for k in OUTCOME_ORDER:
            row[k] = m.counts.get(k, 0)
        rows.append(row)
    return rows


def metrics_csv(named: dict) -> str:
    rows = metrics_rows(named)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def metrics_table(named: dict) -> str:
    """Fixed-width comparison table."""
    rows = metrics_rows(named)
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    line = "  ".join(c.ljust(widths[c]) for c in cols)
    out = [line, "  ".join("-" * widths[c] for c in cols)]
    for r in rows:
        out.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(out) + "\n"


def episodes_csv(results) -> str:
    buf = io.StringIO()
    fields = ["episode", "policy", "success", "outcome", "actual_length", "shortest_length",
              "steps", "steps_to_discovery"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.summary())
    return buf.getvalue()
