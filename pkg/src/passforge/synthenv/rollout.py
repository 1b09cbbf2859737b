"""Rollouts of pass sequences with per-step state caching."""

from __future__ import annotations

from dataclasses import dataclass

from .oz import OZ_SEQ
from .passes import apply_pass
from .program import Program

__all__ = ["RolloutResult", "rollout", "baseline_sizes", "sequence_reward"]


@dataclass(frozen=True)
class RolloutResult:
    """Trace of one rollout; index 0 is the initial state."""

    sizes: tuple[int, ...]
    states_hashes: tuple[int, ...]
    best_step: int
    best_size: int
    best_state: Program

    def __post_init__(self):
        assert self.best_size == min(self.sizes)
        assert self.sizes.index(self.best_size) == self.best_step


def rollout(p: Program, seq) -> RolloutResult:
    """Apply ``seq`` in order, recording the size after every step.

    The best intermediate state is cached on the result, so a generalized
    action can return it without recompiling.
    """
    sizes = [p.instruction_count]
    hashes = [p.content_hash]
    best_step, best_size, best_state = 0, sizes[0], p
    state = p
    for step, a in enumerate(seq, start=1):
        state = apply_pass(state, a)
        n = state.instruction_count
        sizes.append(n)
        hashes.append(state.content_hash)
        if n < best_size:
            best_step, best_size, best_state = step, n, state
    return RolloutResult(tuple(sizes), tuple(hashes), best_step, best_size, best_state)


def baseline_sizes(p: Program) -> tuple[int, int]:
    """(size under no optimization, size under the emulated -Oz pipeline)."""
    return p.instruction_count, rollout(p, OZ_SEQ).best_size


def sequence_reward(p: Program, seq) -> float:
    """Code-size ratio versus the unoptimized program; 1.0 means no gain."""
    return p.instruction_count / rollout(p, seq).best_size
