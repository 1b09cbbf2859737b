"""Deterministic synthetic compiler environment.

Programs are immutable IR-like values; 124 opaque pass ids map to frozen
rewrite rules; rollouts track the best intermediate state, mirroring how a
pass-sequence action returns the smallest cached program state.
"""

from .generator import (
    FAMILIES,
    SIZE_BANDS,
    GeneratorConfig,
    format_config_text,
    generate_program,
    parse_config_text,
)
from .oz import OZ_SEQ, calibrate_oz_sequence
from .passes import NUM_PASSES, PASS_TABLE, apply_pass, passes_of_template
from .program import (
    Function,
    Instruction,
    Program,
    TypeDesc,
    concat_programs,
    dump_program,
    instruction_count,
    load_program,
    to_canonical_json,
)
from .rollout import RolloutResult, baseline_sizes, rollout, sequence_reward

__all__ = [
    "FAMILIES",
    "SIZE_BANDS",
    "GeneratorConfig",
    "format_config_text",
    "generate_program",
    "parse_config_text",
    "OZ_SEQ",
    "calibrate_oz_sequence",
    "NUM_PASSES",
    "PASS_TABLE",
    "apply_pass",
    "passes_of_template",
    "Function",
    "Instruction",
    "Program",
    "TypeDesc",
    "concat_programs",
    "dump_program",
    "instruction_count",
    "load_program",
    "to_canonical_json",
    "RolloutResult",
    "baseline_sizes",
    "rollout",
    "sequence_reward",
]
