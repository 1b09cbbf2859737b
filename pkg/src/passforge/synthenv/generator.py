"""Deterministic program generator.

Four-plus generator families emulate distinct program domains: they differ
in opcode mix, control-flow shape, composite-type frequency and call
structure, so different rewrite passes pay off on different families.
Generation is fully reproducible from ``(seed, GeneratorConfig)``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from ..errors import ConfigError
from .program import (
    PRIMITIVE_TYPES,
    PURE_POOL,
    Function,
    Instruction,
    Program,
    TypeDesc,
    prim,
)

__all__ = [
    "GeneratorConfig",
    "FamilyProfile",
    "FAMILIES",
    "SIZE_BANDS",
    "generate_program",
    "parse_config_text",
    "format_config_text",
]

SIZE_BANDS = {"small": (30, 100), "medium": (100, 400), "large": (400, 1500)}


@dataclass(frozen=True)
class FamilyProfile:
    """Knobs that shape one generator family."""

    opcode_weights: dict[str, float]
    p_const: float          # operand is an inline literal
    p_mem: float            # memory op (alloca/load/store) instead of arith
    p_store: float          # share of memory ops that are stores
    p_call: float           # call instruction probability
    loop_density: float     # back-edge probability per branching block
    p_branch: float         # condbr instead of br between blocks
    p_unreachable: float    # extra never-targeted block per function
    composite_freq: float   # value type is composite
    callee_sizes: tuple[int, int]   # single-block helper size range
    max_callees: int
    blocks_range: tuple[int, int]   # blocks in the main function


def _w(**kw: float) -> dict[str, float]:
    return kw


# Opcode mass concentrates on a few family-dominant opcodes so that a short
# family-tuned pass chain covers most of a program's cleanup potential.
FAMILIES: dict[str, FamilyProfile] = {
    # Arithmetic kernels: dense foldable arith with many literal operands.
    "A": FamilyProfile(
        opcode_weights=_w(add=10, sub=6, mul=5, udiv=0.3, xor=0.2,
                          shl=0.2, cmp_lt=0.2, zext=0.2, select=0.2),
        p_const=0.35, p_mem=0.22, p_store=0.75, p_call=0.02,
        loop_density=0.15, p_branch=0.2, p_unreachable=0.05,
        composite_freq=0.03, callee_sizes=(3, 6), max_callees=1,
        blocks_range=(1, 4),
    ),
    # Branchy control flow with loops and unreachable regions.
    "B": FamilyProfile(
        opcode_weights=_w(cmp_eq=8, cmp_lt=6, select=6, add=0.5, sub=0.3,
                          and_=0.2, or_=0.2, zext=0.2),
        p_const=0.2, p_mem=0.2, p_store=0.6, p_call=0.03,
        loop_density=0.6, p_branch=0.65, p_unreachable=0.5,
        composite_freq=0.05, callee_sizes=(3, 6), max_callees=1,
        blocks_range=(4, 10),
    ),
    # Record/pointer-heavy data wrangling with loads and stores.
    "C": FamilyProfile(
        opcode_weights=_w(trunc=5, zext=5, add=1.5, cmp_eq=0.3, xor=0.2),
        p_const=0.15, p_mem=0.5, p_store=0.45, p_call=0.04,
        loop_density=0.25, p_branch=0.3, p_unreachable=0.1,
        composite_freq=0.5, callee_sizes=(3, 7), max_callees=2,
        blocks_range=(2, 6),
    ),
    # Call-graph heavy: many small helpers, often with literal arguments.
    "D": FamilyProfile(
        opcode_weights=_w(add=6, mul=4, sub=1, or_=0.3, cmp_eq=0.3, zext=0.3),
        p_const=0.35, p_mem=0.18, p_store=0.7, p_call=0.3,
        loop_density=0.1, p_branch=0.25, p_unreachable=0.08,
        composite_freq=0.08, callee_sizes=(4, 10), max_callees=6,
        blocks_range=(1, 5),
    ),
    # Bit-twiddling with a long tail of unused intermediates.
    "E": FamilyProfile(
        opcode_weights=_w(xor=8, and_=5, or_=4, shl=1.5, lshr=1.5, add=0.2),
        p_const=0.25, p_mem=0.18, p_store=0.6, p_call=0.02,
        loop_density=0.2, p_branch=0.3, p_unreachable=0.15,
        composite_freq=0.03, callee_sizes=(3, 6), max_callees=1,
        blocks_range=(1, 5),
    ),
}

# dict keys cannot be python keywords; map back to opcode names
_KEY_TO_OPCODE = {"and_": "and", "or_": "or"}


@dataclass(frozen=True)
class GeneratorConfig:
    size_class: str = "small"
    family: str = "A"
    opcode_alphabet_size: int = len(PURE_POOL)

    def validate(self) -> "GeneratorConfig":
        if self.size_class not in SIZE_BANDS:
            raise ConfigError(f"unknown size class: {self.size_class!r}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family: {self.family!r}")
        if not 1 <= self.opcode_alphabet_size <= len(PURE_POOL):
            raise ConfigError(
                f"opcode_alphabet_size must be in [1, {len(PURE_POOL)}], "
                f"got {self.opcode_alphabet_size}"
            )
        return self


def parse_config_text(text: str) -> tuple[GeneratorConfig, int | None]:
    """Parse the ``key=value`` generator config format.

    Recognized keys: size_class, family, opcode_alphabet_size, seed.
    Returns the config and the seed, if one was given.
    """
    cfg = GeneratorConfig()
    seed: int | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "size_class":
            cfg = replace(cfg, size_class=val)
        elif key == "family":
            cfg = replace(cfg, family=val)
        elif key == "opcode_alphabet_size":
            cfg = replace(cfg, opcode_alphabet_size=int(val))
        elif key == "seed":
            seed = int(val)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    cfg.validate()
    return cfg, seed


def format_config_text(cfg: GeneratorConfig, seed: int | None = None) -> str:
    lines = [
        f"size_class={cfg.size_class}",
        f"family={cfg.family}",
        f"opcode_alphabet_size={cfg.opcode_alphabet_size}",
    ]
    if seed is not None:
        lines.append(f"seed={seed}")
    return "\n".join(lines) + "\n"


def _stable_seed(*parts) -> int:
    # hash() is randomized per process for strings; use a fixed digest
    import hashlib

    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")


def _random_type(rng: random.Random, profile: FamilyProfile, depth: int = 0) -> TypeDesc:
    if depth < 2 and rng.random() < profile.composite_freq:
        kind = rng.choice(("ptr", "arr", "rec"))
        if kind == "rec":
            arity = rng.randint(2, 4)
            return TypeDesc("rec", elems=tuple(
                _random_type(rng, profile, depth + 1) for _ in range(arity)
            ))
        return TypeDesc(kind, elems=(_random_type(rng, profile, depth + 1),))
    return prim(rng.choice(PRIMITIVE_TYPES))


class _FuncBuilder:
    """Accumulates one function; hands out program-wide value ids."""

    def __init__(self, rng, profile, alphabet, counter, params):
        self.rng = rng
        self.profile = profile
        self.alphabet = alphabet      # [(opcode, weight)] restricted pool
        self.counter = counter        # mutable [next_value_id]
        self.params = params
        self.avail: list[tuple[tuple, TypeDesc]] = [
            (("p", k), t) for k, t in enumerate(params)
        ]
        self.pointers: list[tuple[tuple, TypeDesc]] = [
            (o, t) for o, t in self.avail if t.kind == "ptr"
        ]

    def fresh(self) -> int:
        v = self.counter[0]
        self.counter[0] += 1
        return v

    def pick_operand(self) -> tuple:
        rng = self.rng
        if not self.avail or rng.random() < self.profile.p_const:
            return ("c", rng.randint(0, 255))
        # recency bias keeps def-use chains local and leaves old values dead
        if len(self.avail) > 8 and rng.random() < 0.7:
            return rng.choice(self.avail[-8:])[0]
        return rng.choice(self.avail)[0]

    def define(self, op: tuple, ty: TypeDesc) -> None:
        self.avail.append((op, ty))
        if ty.kind == "ptr":
            self.pointers.append((op, ty))

    def body_instruction(self, callees: list[tuple[int, int]]) -> Instruction:
        rng, profile = self.rng, self.profile
        r = rng.random()
        if callees and r < profile.p_call:
            idx, nargs = rng.choice(callees)
            args = tuple(self.pick_operand() for _ in range(nargs))
            v = self.fresh()
            ty = prim(rng.choice(("i32", "i64")))
            self.define(("v", v), ty)
            return Instruction("call", value=v, operands=args, ty=ty, callee=idx)
        if r < profile.p_call + profile.p_mem:
            return self._memory_instruction()
        opcode = rng.choices(
            [o for o, _ in self.alphabet], weights=[w for _, w in self.alphabet]
        )[0]
        nops = 3 if opcode == "select" else 2
        args = tuple(self.pick_operand() for _ in range(nops))
        ty = _random_type(rng, profile)
        if opcode in ("cmp_eq", "cmp_lt"):
            ty = prim("i1")
        v = self.fresh()
        self.define(("v", v), ty)
        return Instruction(opcode, value=v, operands=args, ty=ty)

    def _memory_instruction(self) -> Instruction:
        rng, profile = self.rng, self.profile
        r = rng.random()
        if self.pointers and r < profile.p_store and self.avail:
            val = self.pick_operand()
            ptr = rng.choice(self.pointers)[0]
            return Instruction("store", operands=(val, ptr))
        if self.pointers and r < 0.8:
            ptr_op, ptr_ty = rng.choice(self.pointers)
            ty = ptr_ty.elems[0]
            v = self.fresh()
            self.define(("v", v), ty)
            return Instruction("load", value=v, operands=(ptr_op,), ty=ty)
        inner = _random_type(rng, profile)
        ty = TypeDesc("ptr", elems=(inner,))
        v = self.fresh()
        self.define(("v", v), ty)
        return Instruction("alloca", value=v, operands=(), ty=ty)

    def terminator(self, kind: str, targets: tuple[int, ...]) -> Instruction:
        if kind == "ret":
            ops = (self.pick_operand(),) if self.avail else ()
            return Instruction("ret", operands=ops)
        if kind == "condbr":
            return Instruction("condbr", operands=(self.pick_operand(),), targets=targets)
        return Instruction("br", targets=targets)


def _build_callee(rng, profile, alphabet, counter, size: int) -> Function:
    params = _make_params(rng, profile)
    fb = _FuncBuilder(rng, profile, alphabet, counter, params)
    body = [fb.body_instruction([]) for _ in range(size - 1)]
    body.append(fb.terminator("ret", ()))
    return Function(params, (tuple(body),))


def _make_params(rng, profile) -> tuple[TypeDesc, ...]:
    # parameters are opaque value roots; most functions get a pointer one
    n = rng.randint(2, 4)
    params = []
    for k in range(n):
        if k == 0 and rng.random() < 0.7:
            params.append(TypeDesc("ptr", elems=(prim(rng.choice(("i32", "i64", "f64"))),)))
        else:
            params.append(_random_type(rng, profile))
    return tuple(params)


def _build_main(rng, profile, alphabet, counter, budget: int,
                callees: list[tuple[int, int]]) -> Function:
    lo, hi = profile.blocks_range
    nblocks = max(1, min(rng.randint(lo, hi), budget // 3))
    unreachable = rng.random() < profile.p_unreachable and nblocks >= 2 and budget > nblocks + 2

    body_budget = budget - nblocks  # one terminator per block
    sizes = [0] * nblocks
    for _ in range(body_budget):
        sizes[rng.randrange(nblocks)] += 1

    fb = _FuncBuilder(rng, profile, alphabet, counter, _make_params(rng, profile))
    blocks = []
    last_reachable = nblocks - 2 if unreachable else nblocks - 1
    for bi in range(nblocks):
        instrs = [fb.body_instruction(callees) for _ in range(sizes[bi])]
        if bi == last_reachable or (unreachable and bi == nblocks - 1):
            instrs.append(fb.terminator("ret", ()))
        elif rng.random() < profile.p_branch:
            # loops go backward, otherwise skip forward within the function
            if bi > 0 and rng.random() < profile.loop_density:
                other = rng.randint(0, bi - 1)
            else:
                other = rng.randint(bi + 1, last_reachable)
            instrs.append(fb.terminator("condbr", (bi + 1, other)))
        else:
            instrs.append(fb.terminator("br", (bi + 1,)))
        blocks.append(tuple(instrs))
    return Function(fb.params, tuple(blocks))


def generate_program(seed: int, config: GeneratorConfig) -> Program:
    """Build a program deterministically from ``(seed, config)``.

    The instruction count always lands inside the configured size band.
    """
    config.validate()
    profile = FAMILIES[config.family]
    pool = PURE_POOL[: config.opcode_alphabet_size]
    key_of = {"and": "and_", "or": "or_"}
    alphabet = [
        (op, profile.opcode_weights.get(key_of.get(op, op), 0.0)) for op in pool
    ]
    if any(w > 0 for _, w in alphabet):
        alphabet = [(op, w) for op, w in alphabet if w > 0]
    else:
        alphabet = [(op, 1.0) for op in pool]

    rng = random.Random(_stable_seed(
        seed, config.family, config.size_class, config.opcode_alphabet_size
    ))
    lo, hi = SIZE_BANDS[config.size_class]
    total = rng.randint(lo, hi)

    counter = [0]
    callee_funcs: list[Function] = []
    callee_tags: list[tuple[int, int]] = []
    n_callees = rng.randint(0, profile.max_callees)
    remaining = total
    for _ in range(n_callees):
        size = rng.randint(*profile.callee_sizes)
        if remaining - size < max(10, lo // 3):
            break
        callee_funcs.append(_build_callee(rng, profile, alphabet, counter, size))
        remaining -= size
    # callee function indices start at 1; main is function 0
    callee_tags = [(i + 1, len(f.params)) for i, f in enumerate(callee_funcs)]

    main = _build_main(rng, profile, alphabet, counter, remaining, callee_tags)
    prog = Program((main, *callee_funcs), seed=seed)
    assert lo <= prog.instruction_count <= hi
    return prog
