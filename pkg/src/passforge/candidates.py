"""Candidate pass-sequence mining: random rollouts, truncation, dedup.

For each seed program, a fixed number of uniform-random episodes is rolled
out and the single best sequence kept (exact rational reward, ties broken
length-lexicographically). Winning sequences are truncated by dropping
steps that left the state unchanged and everything after the first step
that reaches the best size, then deduplicated across programs.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import FormatError, InputError
from .synthenv import NUM_PASSES, Program, apply_pass, rollout

__all__ = [
    "CandidateSet",
    "mine_candidates",
    "truncate_sequence",
    "length_lex_dedup",
    "length_lex_key",
    "save_candidates",
    "load_candidates",
]


def length_lex_key(seq) -> tuple:
    return (len(seq), tuple(seq))


@dataclass(frozen=True)
class CandidateSet:
    """Deduplicated mined sequences plus where each one came from."""

    sequences: tuple[tuple[int, ...], ...]
    provenance: tuple[dict, ...]  # per sequence: source seed/id, episode, raw length

    def __post_init__(self):
        assert len(self.sequences) == len(set(self.sequences))
        assert len(self.sequences) == len(self.provenance)


def truncate_sequence(p: Program, seq) -> tuple[int, ...]:
    """Shorten ``seq`` without losing its best size on ``p``.

    Steps whose post-state hash equals their pre-state hash are dropped
    (a no-op step cannot influence later steps because passes are pure
    functions of the state), and the tail after the first attainment of
    the best size is cut.
    """
    state = p
    best_size = p.instruction_count
    kept: list[int] = []
    cut = 0  # length of `kept` when the running best was last improved
    for a in seq:
        nxt = apply_pass(state, a)
        if nxt.content_hash == state.content_hash:
            continue
        kept.append(a)
        state = nxt
        if state.instruction_count < best_size:
            best_size = state.instruction_count
            cut = len(kept)
    return tuple(kept[:cut])


def _exact_reward(p: Program, seq) -> Fraction:
    return Fraction(p.instruction_count, rollout(p, seq).best_size)


def length_lex_dedup(cands: list[tuple[tuple[int, ...], object]]) -> list[tuple[int, ...]]:
    """Keep one sequence per distinct reward: the length-lex smallest.

    Rewards compare exactly (use Fractions of integer sizes, not floats,
    when mining). The output is length-lex sorted with no duplicates.
    """
    best_per_reward: dict[object, tuple[int, ...]] = {}
    for seq, reward in cands:
        seq = tuple(seq)
        cur = best_per_reward.get(reward)
        if cur is None or length_lex_key(seq) < length_lex_key(cur):
            best_per_reward[reward] = seq
    return sorted(set(best_per_reward.values()), key=length_lex_key)


def _episode_seed(rng_seed: int, program_index: int) -> int:
    payload = f"{rng_seed}:{program_index}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def mine_candidates(
    programs: list[Program],
    episodes: int,
    max_len: int = 45,
    rng_seed: int = 0,
    program_ids: list[str] | None = None,
) -> CandidateSet:
    """Random-policy mining over ``programs``.

    Each program is mined independently with a seed derived from
    ``(rng_seed, index)``, so results are deterministic and independent of
    execution order. Programs whose best episode does not beat the empty
    sequence contribute nothing.
    """
    if not programs:
        raise InputError("no programs to mine")
    if episodes < 1:
        raise InputError("episodes must be >= 1")
    if program_ids is None:
        program_ids = [f"prog{idx}" for idx in range(len(programs))]

    winners: list[tuple[tuple[int, ...], Fraction, dict]] = []
    for idx, p in enumerate(programs):
        rng = random.Random(_episode_seed(rng_seed, idx))
        best: tuple[Fraction, tuple, int] | None = None  # (reward, key, episode)
        best_seq: tuple[int, ...] | None = None
        for ep in range(episodes):
            seq = tuple(rng.randrange(NUM_PASSES) for _ in range(max_len))
            reward = _exact_reward(p, seq)
            key = (-reward, length_lex_key(seq))
            if best is None or key < best[:2]:
                best = (key[0], key[1], ep)
                best_seq = seq
        assert best_seq is not None
        reward = -best[0]
        if reward <= 1:
            continue  # nothing improved on this program
        truncated = truncate_sequence(p, best_seq)
        if not truncated:
            continue
        winners.append((
            truncated,
            reward,
            {
                "source_id": program_ids[idx],
                "source_seed": p.seed,
                "episode": best[2],
                "pre_truncation_length": len(best_seq),
            },
        ))

    kept = length_lex_dedup([(seq, rew) for seq, rew, _ in winners])
    prov_by_seq: dict[tuple[int, ...], dict] = {}
    for seq, _, prov in winners:
        prov_by_seq.setdefault(seq, prov)
    return CandidateSet(
        sequences=tuple(kept),
        provenance=tuple(prov_by_seq[s] for s in kept),
    )


# ---------------------------------------------------------------------------
# On-disk format: JSON array of integer arrays + provenance sidecar.
# ---------------------------------------------------------------------------

def save_candidates(cands: CandidateSet, path: str | Path) -> None:
    path = Path(path)
    path.write_text(json.dumps([list(s) for s in cands.sequences]) + "\n")
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    sidecar.write_text(json.dumps(list(cands.provenance), indent=1) + "\n")


def load_candidates(path: str | Path) -> CandidateSet:
    path = Path(path)
    try:
        seqs = json.loads(path.read_text())
        sequences = tuple(tuple(int(a) for a in s) for s in seqs)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"malformed candidates file {path}: {exc}") from exc
    for s in sequences:
        if not s or any(not 0 <= a < NUM_PASSES for a in s):
            raise FormatError(f"invalid sequence in {path}: {s}")
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    if sidecar.exists():
        provenance = tuple(json.loads(sidecar.read_text()))
    else:
        provenance = tuple({} for _ in sequences)
    return CandidateSet(sequences=sequences, provenance=provenance)
