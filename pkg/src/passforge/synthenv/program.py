"""Immutable synthetic IR: typed instructions grouped into blocks and functions.

A program is a pure value. Rewrites build new programs and never mutate;
state identity is defined by ``content_hash``, a 64-bit digest of the
canonical JSON serialization (value ids are renumbered in program order
before hashing, so structurally identical programs hash equal regardless
of how their value ids were allocated).

Canonical JSON schema (also the debug dump format, see ``dump_program``):

    {"version": 1,
     "functions": [
        {"params": ["i32", ...],
         "blocks": [[{"op": "add", "val": 3, "args": [["v", 1], ["c", 4]],
                      "ty": "i32"},               # value instruction
                     {"op": "store", "args": [["v", 3], ["p", 0]]},
                     {"op": "condbr", "args": [["v", 2]], "targets": [1, 2]},
                     {"op": "call", "val": 7, "args": [...], "callee": 1,
                      "ty": "i64"},
                     {"op": "ret", "args": [["v", 3]]}], ...]}, ...]}

Operand encodings: ``["v", id]`` result of the instruction defining value
``id``; ``["c", n]`` integer literal; ``["p", k]`` k-th function parameter.
A ``"mk": 1`` key appears on instructions carrying an analysis mark.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

__all__ = [
    "TypeDesc",
    "Instruction",
    "Function",
    "Program",
    "PRIMITIVE_TYPES",
    "TERMINATORS",
    "VALUE_OPCODES",
    "PURE_OPCODES",
    "FOLDABLE_OPCODES",
    "PURE_POOL",
    "instruction_count",
    "concat_programs",
    "to_canonical_json",
    "parse_type",
    "dump_program",
    "load_program",
]

PRIMITIVE_TYPES = ("i1", "i8", "i32", "i64", "f32", "f64")

# Pure, value-producing arithmetic/logic opcodes; the generator draws its
# opcode alphabet from a prefix of this list.
PURE_POOL = (
    "add", "sub", "mul", "udiv", "urem",
    "and", "or", "xor", "shl", "lshr",
    "cmp_eq", "cmp_lt", "trunc", "zext", "select",
)

TERMINATORS = frozenset({"br", "condbr", "ret"})

# Opcodes that define a value.
VALUE_OPCODES = frozenset(PURE_POOL) | {"alloca", "load", "call"}

# Removable when the defined value is unused (calls may have side effects,
# so they are never pure).
PURE_OPCODES = frozenset(PURE_POOL) | {"alloca", "load"}

# Opcodes with integer constant-folding semantics.
FOLDABLE_OPCODES = frozenset(PURE_POOL)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TypeDesc:
    """Operand type: primitive, pointer(inner), array(element), record(members)."""

    kind: str  # "prim" | "ptr" | "arr" | "rec"
    name: str = ""
    elems: tuple["TypeDesc", ...] = ()

    def token(self) -> str:
        """Compact textual form, e.g. ``rec(i32,ptr(f32))``. Used for hashing
        and as the pre-expansion graph text of variable nodes."""
        if self.kind == "prim":
            return self.name
        if self.kind == "ptr":
            return f"ptr({self.elems[0].token()})"
        if self.kind == "arr":
            return f"arr({self.elems[0].token()})"
        return "rec(" + ",".join(t.token() for t in self.elems) + ")"

    @property
    def is_composite(self) -> bool:
        return self.kind != "prim"


def prim(name: str) -> TypeDesc:
    return TypeDesc("prim", name)


I32 = prim("i32")
I64 = prim("i64")


@dataclass(frozen=True)
class Instruction:
    """One IR instruction.

    ``value`` is the program-wide id of the value this instruction defines
    (None for effect-only instructions: store and terminators). ``targets``
    are function-local block indices for br/condbr; ``callee`` is a function
    index for call.
    """

    opcode: str
    value: int | None = None
    operands: tuple[tuple, ...] = ()
    ty: TypeDesc = I32
    targets: tuple[int, ...] = ()
    callee: int | None = None
    marked: bool = False


@dataclass(frozen=True)
class Function:
    params: tuple[TypeDesc, ...]
    blocks: tuple[tuple[Instruction, ...], ...]


@dataclass(frozen=True, eq=False)
class Program:
    """A whole program. Equality of state is ``content_hash`` equality."""

    functions: tuple[Function, ...]
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def instruction_count(self) -> int:
        n = self._cache.get("count")
        if n is None:
            n = sum(len(b) for f in self.functions for b in f.blocks)
            self._cache["count"] = n
        return n

    @property
    def content_hash(self) -> int:
        h = self._cache.get("hash")
        if h is None:
            payload = to_canonical_json(self).encode("utf-8")
            h = int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")
            self._cache["hash"] = h
        return h

    def next_value_id(self) -> int:
        top = -1
        for f in self.functions:
            for b in f.blocks:
                for ins in b:
                    if ins.value is not None and ins.value > top:
                        top = ins.value
        return top + 1


def instruction_count(p: Program) -> int:
    """Total instructions across all blocks of all functions."""
    return p.instruction_count


def _canonical_dict(p: Program) -> dict:
    # Renumber value ids in definition order so the serialization depends
    # only on structure.
    remap: dict[int, int] = {}
    for f in p.functions:
        for b in f.blocks:
            for ins in b:
                if ins.value is not None:
                    remap[ins.value] = len(remap)

    def enc_operand(op: tuple) -> list:
        tag = op[0]
        if tag == "v":
            return ["v", remap[op[1]]]
        return [tag, op[1]]

    funcs = []
    for f in p.functions:
        blocks = []
        for b in f.blocks:
            instrs = []
            for ins in b:
                d: dict = {"op": ins.opcode, "args": [enc_operand(o) for o in ins.operands]}
                if ins.value is not None:
                    d["val"] = remap[ins.value]
                    d["ty"] = ins.ty.token()
                if ins.targets:
                    d["targets"] = list(ins.targets)
                if ins.callee is not None:
                    d["callee"] = ins.callee
                if ins.marked:
                    d["mk"] = 1
                instrs.append(d)
            blocks.append(instrs)
        funcs.append({"params": [t.token() for t in f.params], "blocks": blocks})
    return {"version": 1, "functions": funcs}


def to_canonical_json(p: Program) -> str:
    """Canonical serialization; the byte input of ``content_hash``."""
    return json.dumps(_canonical_dict(p), sort_keys=True, separators=(",", ":"))


def concat_programs(a: Program, b: Program) -> Program:
    """Disjoint union: functions of ``b`` appended after ``a``'s.

    Value ids and callee indices of ``b`` are shifted so the components do
    not interact; instruction counts add exactly.
    """
    shift_val = a.next_value_id()
    shift_fn = len(a.functions)

    def shift_ins(ins: Instruction) -> Instruction:
        ops = tuple(("v", o[1] + shift_val) if o[0] == "v" else o for o in ins.operands)
        return Instruction(
            opcode=ins.opcode,
            value=None if ins.value is None else ins.value + shift_val,
            operands=ops,
            ty=ins.ty,
            targets=ins.targets,
            callee=None if ins.callee is None else ins.callee + shift_fn,
            marked=ins.marked,
        )

    shifted = tuple(
        Function(f.params, tuple(tuple(shift_ins(i) for i in b_) for b_ in f.blocks))
        for f in b.functions
    )
    return Program(a.functions + shifted, seed=a.seed)


# ---------------------------------------------------------------------------
# Debug / ingestion serialization (canonical schema plus a seed sidecar key).
# ---------------------------------------------------------------------------

def dump_program(p: Program) -> str:
    return json.dumps(
        {"seed": p.seed, "program": _canonical_dict(p)},
        sort_keys=True, separators=(",", ":"),
    )


def parse_type(token: str) -> TypeDesc:
    token = token.strip()
    for ctor, kind in (("ptr(", "ptr"), ("arr(", "arr"), ("rec(", "rec")):
        if token.startswith(ctor) and token.endswith(")"):
            inner = token[len(ctor):-1]
            parts, depth, cur = [], 0, []
            for ch in inner:
                if ch == "," and depth == 0:
                    parts.append("".join(cur))
                    cur = []
                    continue
                if ch == "(":
                    depth += 1
                elif ch == ")":
                    depth -= 1
                cur.append(ch)
            if cur:
                parts.append("".join(cur))
            return TypeDesc(kind, elems=tuple(parse_type(s) for s in parts))
    return prim(token)


def load_program(text: str) -> Program:
    """Inverse of ``dump_program``; round-trips the canonical schema."""
    from ..errors import FormatError

    try:
        doc = json.loads(text)
        payload = doc["program"]
        funcs = []
        for f in payload["functions"]:
            blocks = []
            for blk in f["blocks"]:
                instrs = []
                for d in blk:
                    ops = tuple(
                        ("v", o[1]) if o[0] == "v" else (o[0], o[1]) for o in d["args"]
                    )
                    instrs.append(Instruction(
                        opcode=d["op"],
                        value=d.get("val"),
                        operands=ops,
                        ty=parse_type(d["ty"]) if "ty" in d else I32,
                        targets=tuple(d.get("targets", ())),
                        callee=d.get("callee"),
                        marked=bool(d.get("mk", 0)),
                    ))
                blocks.append(tuple(instrs))
            funcs.append(Function(tuple(parse_type(t) for t in f["params"]), tuple(blocks)))
        return Program(tuple(funcs), seed=int(doc.get("seed", 0)))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed program JSON: {exc}") from exc
