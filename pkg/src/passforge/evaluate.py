"""Budgeted inference protocol, reference policies, and size metrics.

A policy scores the coreset, sequences are rolled out from the original
program in descending score order, and whatever would overflow the 45-pass
budget is truncated. The oracle ignores the budget and takes the best of
every coreset sequence; the popularity baseline replaces model scores with
how often each sequence tops a training-matrix row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .synthenv import Program, baseline_sizes, rollout

__all__ = [
    "DEFAULT_BUDGET",
    "PolicyPlan",
    "EvalRow",
    "EvalReport",
    "infer",
    "execute_plan",
    "oracle_eval",
    "popularity_scores",
    "topk_popular_eval",
    "mean_over_oz",
    "gmean_over_oz",
    "evaluate_program",
    "save_report",
    "load_report",
    "report_csv",
]

DEFAULT_BUDGET = 45


@dataclass(frozen=True)
class PolicyPlan:
    """Sequences to roll out, each truncated to its allotted pass count."""

    entries: tuple[tuple[int, int], ...]  # (coreset index, allotted passes)
    sequences: tuple[tuple[int, ...], ...]  # already truncated to allotment
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        assert sum(take for _, take in self.entries) <= self.budget
        assert all(len(s) == take for (_, take), s in zip(self.entries, self.sequences))

    @property
    def passes_used(self) -> int:
        return sum(take for _, take in self.entries)


def infer(scores, coreset_sequences, budget: int = DEFAULT_BUDGET) -> PolicyPlan:
    """Greedy plan: highest score first, ties to the lower coreset index.

    The sequence that would cross the budget is included truncated to the
    remaining allowance; selection is by maximum score, never sampled.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(coreset_sequences):
        raise InputError("score vector length does not match the coreset")
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    entries: list[tuple[int, int]] = []
    seqs: list[tuple[int, ...]] = []
    remaining = budget
    for j in order:
        if remaining == 0:
            break
        seq = tuple(coreset_sequences[j])
        take = min(len(seq), remaining)
        entries.append((j, take))
        seqs.append(seq[:take])
        remaining -= take
    return PolicyPlan(tuple(entries), tuple(seqs), budget)


def execute_plan(p: Program, plan: PolicyPlan) -> tuple[int, int]:
    """Roll out every planned sequence from the original program state.

    Returns (best size over all rollouts and the untouched program,
    passes used). Restarting per sequence matches how coreset rewards were
    measured.
    """
    best = p.instruction_count
    for seq in plan.sequences:
        best = min(best, rollout(p, seq).best_size)
    return best, plan.passes_used


def oracle_eval(p: Program, coreset_sequences) -> int:
    """Unbudgeted brute force over the whole coreset."""
    best = p.instruction_count
    for seq in coreset_sequences:
        best = min(best, rollout(p, seq).best_size)
    return best


def popularity_scores(train_values: np.ndarray) -> np.ndarray:
    """How many training rows each column tops (ties credit every winner)."""
    values = np.asarray(train_values, dtype=np.float64)
    row_max = values.max(axis=1, keepdims=True)
    return (values == row_max).sum(axis=0).astype(np.float64)


def topk_popular_eval(p: Program, coreset_sequences, train_values,
                      budget: int = DEFAULT_BUDGET) -> tuple[int, int]:
    plan = infer(popularity_scores(train_values), coreset_sequences, budget)
    return execute_plan(p, plan)


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRow:
    program_id: str
    family: str
    size_o0: int
    size_oz: int
    size_policy: int
    passes_used: int


def mean_over_oz(rows) -> float:
    """Arithmetic mean of per-program relative improvement over -Oz."""
    if not rows:
        raise InputError("no rows to aggregate")
    return float(np.mean([(r.size_oz - r.size_policy) / r.size_oz for r in rows]))


def gmean_over_oz(rows) -> float:
    """Geometric mean of per-program size ratios -Oz / policy."""
    if not rows:
        raise InputError("no rows to aggregate")
    return float(math.exp(np.mean([math.log(r.size_oz / r.size_policy) for r in rows])))


def evaluate_program(p: Program, program_id: str, family: str, plan: PolicyPlan,
                     oz_size: int | None = None) -> EvalRow:
    o0 = p.instruction_count
    if oz_size is None:
        _, oz_size = baseline_sizes(p)
    size, used = execute_plan(p, plan)
    return EvalRow(program_id, family, o0, oz_size, size, used)


# ---------------------------------------------------------------------------
# Reports.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    budget: int
    methods: dict[str, tuple[EvalRow, ...]] = field(default_factory=dict)

    def aggregates(self, method: str) -> dict:
        rows = self.methods[method]
        per_family: dict[str, dict] = {}
        for fam in sorted({r.family for r in rows}):
            fam_rows = [r for r in rows if r.family == fam]
            per_family[fam] = {
                "n": len(fam_rows),
                "mean_over_oz": mean_over_oz(fam_rows),
                "gmean_over_oz": gmean_over_oz(fam_rows),
            }
        return {
            "n": len(rows),
            "mean_over_oz": mean_over_oz(rows),
            "gmean_over_oz": gmean_over_oz(rows),
            "per_family": per_family,
        }


def save_report(report: EvalReport, path: str | Path) -> None:
    doc = {
        "version": 1,
        "budget": report.budget,
        "methods": {
            name: {
                "rows": [vars(r) for r in rows],
                "aggregate": report.aggregates(name),
            }
            for name, rows in report.methods.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_report(path: str | Path) -> EvalReport:
    try:
        doc = json.loads(Path(path).read_text())
        methods = {
            name: tuple(EvalRow(**row) for row in body["rows"])
            for name, body in doc["methods"].items()
        }
        return EvalReport(budget=int(doc["budget"]), methods=methods)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed report {path}: {exc}") from exc


def report_csv(report: EvalReport) -> str:
    lines = ["method,family,n,mean_over_oz,gmean_over_oz"]
    for name in sorted(report.methods):
        agg = report.aggregates(name)
        lines.append(
            f"{name},all,{agg['n']},{agg['mean_over_oz']!r},{agg['gmean_over_oz']!r}")
        for fam, stats in agg["per_family"].items():
            lines.append(
                f"{name},{fam},{stats['n']},{stats['mean_over_oz']!r},"
                f"{stats['gmean_over_oz']!r}")
    return "\n".join(lines) + "\n"
