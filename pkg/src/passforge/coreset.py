"""Reward matrix construction and greedy coreset selection.

The coverage objective J(S) = sum_i max_{j in S} r_ij (J of the empty set
is 0) is nonnegative, monotone and submodular for positive rewards, so the
classic greedy algorithm carries the (1 - 1/e) guarantee. The greedy
implementation caches per-row maxima; ``greedy_select_reference`` is the
naive re-evaluating version kept as a test oracle, and
``brute_force_select`` enumerates exhaustively on small instances.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import FormatError, InputError
from .synthenv import Program, sequence_reward

__all__ = [
    "RewardMatrix",
    "Coreset",
    "build_reward_matrix",
    "normalize_rows",
    "objective",
    "greedy_select",
    "greedy_select_reference",
    "brute_force_select",
    "GreedyCoresetSelector",
    "save_matrix_csv",
    "load_matrix_csv",
    "save_coreset",
    "load_coreset",
]


@dataclass(frozen=True)
class RewardMatrix:
    """N programs x M candidate sequences of positive reward ratios."""

    values: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[int, ...]
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise InputError("reward matrix must be 2-D")
        if v.shape != (len(self.row_ids), len(self.col_ids)):
            raise InputError("reward matrix shape does not match ids")
        if not (v > 0).all():
            raise InputError("reward matrix entries must be positive")
        if self.normalized and not np.all(v.max(axis=1) == 1.0):
            raise InputError("normalized matrix must have row maxima of 1")


@dataclass(frozen=True)
class Coreset:
    """Greedy pick order, the picked sequences, and the objective trace."""

    selected: tuple[int, ...]
    sequences: tuple[tuple[int, ...], ...]
    objective_trace: tuple[float, ...] = field(default=())

    def __post_init__(self):
        assert len(self.selected) == len(set(self.selected))
        assert all(a <= b + 1e-12 for a, b in
                   zip(self.objective_trace, self.objective_trace[1:]))


def build_reward_matrix(
    programs: list[Program],
    candidates,
    row_ids: list[str] | None = None,
) -> RewardMatrix:
    """values[i][j] = reward of candidate j on program i, unnormalized."""
    sequences = list(getattr(candidates, "sequences", candidates))
    if not programs or not sequences:
        raise InputError("need at least one program and one candidate")
    if row_ids is None:
        row_ids = [f"prog{idx}" for idx in range(len(programs))]
    values = np.empty((len(programs), len(sequences)), dtype=np.float64)
    for i, p in enumerate(programs):
        for j, seq in enumerate(sequences):
            values[i, j] = sequence_reward(p, seq)
    return RewardMatrix(values, tuple(row_ids), tuple(range(len(sequences))))


def normalize_rows(R: RewardMatrix) -> RewardMatrix:
    """Divide each row by its maximum so the best sequence scores exactly 1."""
    if R.normalized:
        raise InputError("matrix already normalized")
    values = R.values / R.values.max(axis=1, keepdims=True)
    return RewardMatrix(values, R.row_ids, R.col_ids, normalized=True)


def objective(R: RewardMatrix | np.ndarray, S) -> float:
    """Coverage objective: sum over rows of the best selected reward."""
    cols = sorted(S)
    if not cols:
        return 0.0
    values = R.values if isinstance(R, RewardMatrix) else np.asarray(R)
    return float(values[:, cols].max(axis=1).sum())


def _as_values(R) -> np.ndarray:
    return R.values if isinstance(R, RewardMatrix) else np.asarray(R, dtype=np.float64)


def greedy_select(R: RewardMatrix, K: int, sequences=None) -> Coreset:
    """Greedy maximization with cached row maxima.

    Ties break toward the lowest column index; selection stops early if no
    remaining column increases the objective.
    """
    values = _as_values(R)
    n, m = values.shape
    if not 1 <= K <= m:
        raise InputError(f"K must be in [1, {m}], got {K}")
    cur_max = np.zeros(n, dtype=np.float64)
    selected: list[int] = []
    trace: list[float] = []
    total = 0.0
    for _ in range(K):
        gains = np.maximum(values - cur_max[:, None], 0.0).sum(axis=0)
        if selected:
            gains[selected] = -1.0
        j = int(np.argmax(gains))  # argmax returns the first (lowest) index
        if gains[j] <= 0.0:
            break
        selected.append(j)
        cur_max = np.maximum(cur_max, values[:, j])
        total = float(cur_max.sum())
        trace.append(total)
    seqs = tuple(tuple(sequences[j]) for j in selected) if sequences is not None else ()
    return Coreset(tuple(selected), seqs, tuple(trace))


def greedy_select_reference(R: RewardMatrix, K: int) -> Coreset:
    """Naive O(K*M*N) greedy; must match ``greedy_select`` exactly."""
    values = _as_values(R)
    m = values.shape[1]
    if not 1 <= K <= m:
        raise InputError(f"K must be in [1, {m}], got {K}")
    selected: list[int] = []
    trace: list[float] = []
    best_total = 0.0
    for _ in range(K):
        best_j, best_val = -1, best_total
        for j in range(m):
            if j in selected:
                continue
            val = objective(values, selected + [j])
            if val > best_val:
                best_j, best_val = j, val
        if best_j < 0:
            break
        selected.append(best_j)
        best_total = best_val
        trace.append(best_val)
    return Coreset(tuple(selected), (), tuple(trace))


def brute_force_select(R: RewardMatrix, K: int) -> tuple[tuple[int, ...], float]:
    """Exact maximizer by enumeration; guarded against blowup."""
    values = _as_values(R)
    m = values.shape[1]
    if not 1 <= K <= m:
        raise InputError(f"K must be in [1, {m}], got {K}")
    if math.comb(m, K) > 10**6:
        raise InputError(f"C({m},{K}) exceeds the enumeration guard")
    best_set, best_val = (), -math.inf
    for combo in itertools.combinations(range(m), K):
        val = objective(values, combo)
        if val > best_val:  # strict: ties keep the lexicographically first
            best_set, best_val = combo, val
    return best_set, float(best_val)


class GreedyCoresetSelector(BaseEstimator, TransformerMixin):
    """Column selector over a reward matrix, sklearn style.

    ``fit`` expects a per-row max-normalized positive matrix (``normalize=True``
    rescales internally). ``transform`` keeps the selected columns, so a
    reward matrix over all candidates becomes the per-program value vectors
    over the coreset.
    """

    def __init__(self, k: int = 50, normalize: bool = True):
        self.k = k
        self.normalize = normalize

    def fit(self, X, y=None):
        values = _as_values(X)
        if values.ndim != 2 or not (values > 0).all():
            raise InputError("expected a positive 2-D reward matrix")
        if self.normalize:
            values = values / values.max(axis=1, keepdims=True)
        R = RewardMatrix(
            values,
            tuple(f"r{i}" for i in range(values.shape[0])),
            tuple(range(values.shape[1])),
            normalized=True,
        )
        result = greedy_select(R, min(self.k, values.shape[1]))
        self.selected_ = list(result.selected)
        self.objective_trace_ = list(result.objective_trace)
        self.n_features_in_ = values.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "selected_"):
            raise NotFittedError("GreedyCoresetSelector is not fitted yet")
        return _as_values(X)[:, self.selected_]


# ---------------------------------------------------------------------------
# CSV / JSON formats. The CSV doubles as the ingestion point for externally
# computed reward matrices.
# ---------------------------------------------------------------------------

def save_matrix_csv(R: RewardMatrix, path: str | Path) -> None:
    lines = ["program_id," + ",".join(f"seq_{j}" for j in R.col_ids)]
    for rid, row in zip(R.row_ids, R.values):
        lines.append(rid + "," + ",".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix_csv(path: str | Path) -> RewardMatrix:
    try:
        lines = Path(path).read_text().strip().splitlines()
        header = lines[0].split(",")
        if header[0] != "program_id" or any(
            h != f"seq_{j}" for j, h in enumerate(header[1:])
        ):
            raise FormatError(f"bad reward matrix header in {path}")
        row_ids, rows = [], []
        for line in lines[1:]:
            cells = line.split(",")
            if len(cells) != len(header):
                raise FormatError(f"ragged row in {path}: {line[:40]}...")
            row_ids.append(cells[0])
            rows.append([float(c) for c in cells[1:]])
        return RewardMatrix(
            np.array(rows, dtype=np.float64),
            tuple(row_ids),
            tuple(range(len(header) - 1)),
        )
    except (IndexError, ValueError, InputError) as exc:
        raise FormatError(f"malformed reward matrix {path}: {exc}") from exc


def save_coreset(c: Coreset, path: str | Path) -> None:
    doc = {
        "selected": list(c.selected),
        "sequences": [list(s) for s in c.sequences],
        "objective_trace": list(c.objective_trace),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_coreset(path: str | Path) -> Coreset:
    try:
        doc = json.loads(Path(path).read_text())
        return Coreset(
            tuple(int(j) for j in doc["selected"]),
            tuple(tuple(int(a) for a in s) for s in doc["sequences"]),
            tuple(float(x) for x in doc["objective_trace"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed coreset file {path}: {exc}") from exc
