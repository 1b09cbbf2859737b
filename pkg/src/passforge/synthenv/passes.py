"""The 124-pass action space: parameterized graph-rewrite rules.

Each pass id in [0, 124) maps to one instance of a rewrite template with
parameters drawn from a seeded RNG keyed on the id, so pass behavior is a
frozen part of the environment. Many (program, pass) pairs are no-ops, and
some passes only pay off after an enabling pass has run (mark/sweep), which
makes pass order matter. All rewrites are pure: they return a new program,
or the identical object when nothing changed.

Templates: dead-code sweep to a fixpoint (idempotent), single-round constant
folding, algebraic simplification, block straightening, constant-range
marking plus the sweep that folds marked values, single-block inlining,
unreachable-block / dead-function removal, and strict no-ops.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .program import (
    FOLDABLE_OPCODES,
    PURE_OPCODES,
    Function,
    Instruction,
    Program,
)

__all__ = ["NUM_PASSES", "PASS_TABLE", "PassSpec", "apply_pass", "passes_of_template"]

NUM_PASSES = 124

_M64 = (1 << 64) - 1


def _eval_op(opcode: str, args: list[int]) -> int:
    a = args[0] if args else 0
    b = args[1] if len(args) > 1 else 0
    if opcode == "add":
        return (a + b) & _M64
    if opcode == "sub":
        return (a - b) & _M64
    if opcode == "mul":
        return (a * b) & _M64
    if opcode == "udiv":
        return (a // b) & _M64 if b else 0
    if opcode == "urem":
        return (a % b) & _M64 if b else 0
    if opcode == "and":
        return a & b
    if opcode == "or":
        return a | b
    if opcode == "xor":
        return a ^ b
    if opcode == "shl":
        return (a << (b & 63)) & _M64
    if opcode == "lshr":
        return (a & _M64) >> (b & 63)
    if opcode == "cmp_eq":
        return int(a == b)
    if opcode == "cmp_lt":
        return int(a < b)
    if opcode == "trunc":
        return a & 0xFFFFFFFF
    if opcode == "zext":
        return a & _M64
    if opcode == "select":
        return args[1] if args[0] else args[2]
    raise ValueError(f"not foldable: {opcode}")


def _value_uses(func: Function) -> dict[int, int]:
    uses: dict[int, int] = {}
    for block in func.blocks:
        for ins in block:
            for op in ins.operands:
                if op[0] == "v":
                    uses[op[1]] = uses.get(op[1], 0) + 1
    return uses


def _chase(repl: dict[int, tuple]) -> dict[int, tuple]:
    """Resolve replacement chains so y -> x resolves when x was itself replaced."""
    for vid, sub in list(repl.items()):
        seen = {vid}
        while sub[0] == "v" and sub[1] in repl and sub[1] not in seen:
            seen.add(sub[1])
            sub = repl[sub[1]]
        repl[vid] = sub
    return repl


def _substitute(func: Function, repl: dict[int, tuple],
                drop: set[int]) -> Function:
    """Drop instructions whose id() is in ``drop`` and rewrite operands."""
    blocks = []
    for block in func.blocks:
        instrs = []
        for ins in block:
            if id(ins) in drop:
                continue
            if repl and any(op[0] == "v" and op[1] in repl for op in ins.operands):
                ops = tuple(
                    repl[op[1]] if op[0] == "v" and op[1] in repl else op
                    for op in ins.operands
                )
                ins = Instruction(ins.opcode, ins.value, ops, ins.ty,
                                  ins.targets, ins.callee, ins.marked)
            instrs.append(ins)
        blocks.append(tuple(instrs))
    return Function(func.params, tuple(blocks))


# ---------------------------------------------------------------------------
# Rewrite templates (each returns the same Function/Program object on no-op).
# ---------------------------------------------------------------------------

def _dce(func: Function, allowed: frozenset[str] | None) -> Function:
    # Fixpoint removal, so a second application is always a no-op.
    while True:
        uses = _value_uses(func)
        drop = {
            id(ins)
            for block in func.blocks
            for ins in block
            if ins.value is not None
            and ins.opcode in PURE_OPCODES
            and (allowed is None or ins.opcode in allowed)
            and uses.get(ins.value, 0) == 0
        }
        if not drop:
            return func
        func = _substitute(func, {}, drop)


def _fold_round(func: Function, allowed: frozenset[str] | None,
                only_marked: bool) -> Function:
    """One simultaneous round of constant folding over the original state."""
    if only_marked:
        # fixpoint set of marked values whose operands bottom out in constants
        evaluable: dict[int, int] = {}
        defs = {
            ins.value: ins
            for block in func.blocks for ins in block
            if ins.value is not None and ins.marked and ins.opcode in FOLDABLE_OPCODES
        }
        progress = True
        while progress:
            progress = False
            for vid, ins in defs.items():
                if vid in evaluable:
                    continue
                args = []
                ok = True
                for op in ins.operands:
                    if op[0] == "c":
                        args.append(op[1])
                    elif op[0] == "v" and op[1] in evaluable:
                        args.append(evaluable[op[1]])
                    else:
                        ok = False
                        break
                if ok:
                    evaluable[vid] = _eval_op(ins.opcode, args)
                    progress = True
        targets = evaluable
    else:
        targets = {}
        for block in func.blocks:
            for ins in block:
                if (ins.value is not None and ins.opcode in FOLDABLE_OPCODES
                        and (allowed is None or ins.opcode in allowed)
                        and ins.operands
                        and all(op[0] == "c" for op in ins.operands)):
                    targets[ins.value] = _eval_op(
                        ins.opcode, [op[1] for op in ins.operands])

    if not targets:
        return func
    drop = {
        id(ins)
        for block in func.blocks for ins in block
        if ins.value is not None and ins.value in targets
    }
    repl = {vid: ("c", val) for vid, val in targets.items()}
    return _substitute(func, repl, drop)


_SIMPLIFY_PATTERNS = (
    "add0", "sub0", "mul1", "mul0", "div1",
    "xor_self", "sub_self", "and_self", "or_self", "shift0", "select_const",
)


def _match_pattern(ins: Instruction, enabled: frozenset[str]):
    """Return the replacement operand for a simplifiable instruction."""
    op, args = ins.opcode, ins.operands
    if len(args) == 2:
        a, b = args
        is0 = lambda o: o[0] == "c" and o[1] == 0
        is1 = lambda o: o[0] == "c" and o[1] == 1
        if "add0" in enabled and op == "add":
            if is0(b):
                return a
            if is0(a):
                return b
        if "sub0" in enabled and op == "sub" and is0(b):
            return a
        if "mul1" in enabled and op == "mul":
            if is1(b):
                return a
            if is1(a):
                return b
        if "mul0" in enabled and op == "mul" and (is0(a) or is0(b)):
            return ("c", 0)
        if "div1" in enabled and op == "udiv" and is1(b):
            return a
        if "xor_self" in enabled and op == "xor" and a == b:
            return ("c", 0)
        if "sub_self" in enabled and op == "sub" and a == b:
            return ("c", 0)
        if "and_self" in enabled and op == "and" and a == b:
            return a
        if "or_self" in enabled and op == "or" and a == b:
            return a
        if "shift0" in enabled and op in ("shl", "lshr") and is0(b):
            return a
    if ("select_const" in enabled and op == "select" and len(args) == 3
            and args[0][0] == "c"):
        return args[1] if args[0][1] else args[2]
    return None


def _simplify(func: Function, enabled: frozenset[str]) -> Function:
    repl: dict[int, tuple] = {}
    drop: set[int] = set()
    for block in func.blocks:
        for ins in block:
            if ins.value is None:
                continue
            sub = _match_pattern(ins, enabled)
            if sub is not None:
                repl[ins.value] = sub
                drop.add(id(ins))
    if not drop:
        return func
    return _substitute(func, _chase(repl), drop)


def _block_preds(func: Function) -> dict[int, int]:
    preds: dict[int, int] = {}
    for block in func.blocks:
        term = block[-1]
        for t in term.targets:
            preds[t] = preds.get(t, 0) + 1
    return preds


def _blockmerge(func: Function, max_merges: int) -> Function:
    merged = 0
    while merged < max_merges:
        preds = _block_preds(func)
        found = None
        for bi, block in enumerate(func.blocks):
            term = block[-1]
            if term.opcode != "br":
                continue
            t = term.targets[0]
            if t == bi or t == 0 or preds.get(t, 0) != 1:
                continue
            if t in func.blocks[t][-1].targets:
                continue  # self-looping successor keeps its own block
            found = (bi, t)
            break
        if found is None:
            break
        bi, t = found
        new_block = func.blocks[bi][:-1] + func.blocks[t]
        blocks = [b for j, b in enumerate(func.blocks) if j != t]
        blocks[bi if bi < t else bi - 1] = new_block

        def remap(j: int) -> int:
            return j - 1 if j > t else j

        fixed = []
        for b in blocks:
            term = b[-1]
            if term.targets:
                term = Instruction(term.opcode, term.value, term.operands,
                                   term.ty, tuple(remap(x) for x in term.targets),
                                   term.callee, term.marked)
                b = b[:-1] + (term,)
            fixed.append(b)
        func = Function(func.params, tuple(fixed))
        merged += 1
    return func


def _mark(func: Function, allowed: frozenset[str] | None) -> Function:
    marked = {
        ins.value
        for block in func.blocks for ins in block
        if ins.marked and ins.value is not None
    }
    progress = True
    while progress:
        progress = False
        for block in func.blocks:
            for ins in block:
                if (ins.value is None or ins.value in marked
                        or ins.opcode not in FOLDABLE_OPCODES
                        or (allowed is not None and ins.opcode not in allowed)
                        or not ins.operands):
                    continue
                if all(op[0] == "c" or (op[0] == "v" and op[1] in marked)
                       for op in ins.operands):
                    marked.add(ins.value)
                    progress = True
    new_blocks = []
    changed = False
    for block in func.blocks:
        instrs = []
        for ins in block:
            if ins.value in marked and not ins.marked:
                ins = Instruction(ins.opcode, ins.value, ins.operands, ins.ty,
                                  ins.targets, ins.callee, True)
                changed = True
            instrs.append(ins)
        new_blocks.append(tuple(instrs))
    return Function(func.params, tuple(new_blocks)) if changed else func


def _sweep(func: Function, dce_after: frozenset[str] | None) -> Function:
    folded = _fold_round(func, None, only_marked=True)
    if folded is func:
        return func
    if dce_after is not None:
        folded = _dce(folded, dce_after)
    return folded


def _reachable_blocks(func: Function) -> set[int]:
    seen = {0}
    stack = [0]
    while stack:
        b = stack.pop()
        for t in func.blocks[b][-1].targets:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen

def _drop_unreachable(func: Function, max_blocks: int) -> Function:
    reachable = _reachable_blocks(func)
    dead = [b for b in range(len(func.blocks)) if b not in reachable]
    if not dead:
        return func
    dropped = set(dead[:max_blocks])
    keep = [b for b in range(len(func.blocks)) if b not in dropped]
    remap = {old: new for new, old in enumerate(keep)}
    blocks = []
    for old in keep:
        b = func.blocks[old]
        term = b[-1]
        if term.targets:
            term = Instruction(term.opcode, term.value, term.operands, term.ty,
                               tuple(remap[t] for t in term.targets),
                               term.callee, term.marked)
            b = b[:-1] + (term,)
        blocks.append(b)
    return Function(func.params, tuple(blocks))


def _cfgsimplify(prog: Program, remove_dead_functions: bool,
                 max_blocks: int) -> Program:
    funcs = tuple(_drop_unreachable(f, max_blocks) for f in prog.functions)
    changed = any(a is not b for a, b in zip(funcs, prog.functions))
    if remove_dead_functions and len(funcs) > 1:
        called = {0}
        for f in funcs:
            for block in f.blocks:
                for ins in block:
                    if ins.callee is not None:
                        called.add(ins.callee)
        keep = [i for i in range(len(funcs)) if i in called]
        if len(keep) < len(funcs):
            remap = {old: new for new, old in enumerate(keep)}
            rebuilt = []
            for i in keep:
                f = funcs[i]
                blocks = tuple(
                    tuple(
                        Instruction(ins.opcode, ins.value, ins.operands, ins.ty,
                                    ins.targets, remap[ins.callee], ins.marked)
                        if ins.callee is not None else ins
                        for ins in block
                    )
                    for block in f.blocks
                )
                rebuilt.append(Function(f.params, blocks))
            funcs = tuple(rebuilt)
            changed = True
    if not changed:
        return prog
    return Program(funcs, seed=prog.seed)


def _inline(prog: Program, max_size: int, max_sites: int) -> Program:
    inlinable = {
        idx
        for idx, f in enumerate(prog.functions)
        if len(f.blocks) == 1 and len(f.blocks[0]) <= max_size
    }
    if not inlinable:
        return prog
    next_id = [prog.next_value_id()]
    sites_left = max_sites
    new_funcs = []
    changed = False
    for fi, func in enumerate(prog.functions):
        if sites_left == 0:
            new_funcs.append(func)
            continue
        blocks = []
        func_changed = False
        repl: dict[int, tuple] = {}
        for block in func.blocks:
            out: list[Instruction] = []
            for ins in block:
                if (sites_left > 0 and ins.opcode == "call"
                        and ins.callee is not None and ins.callee in inlinable
                        and ins.callee != fi):
                    callee = prog.functions[ins.callee]
                    vmap: dict[int, int] = {}

                    def sub_op(op: tuple) -> tuple:
                        if op[0] == "p":
                            return ins.operands[op[1]] if op[1] < len(ins.operands) else ("c", 0)
                        if op[0] == "v":
                            return ("v", vmap[op[1]])
                        return op

                    ret_op: tuple = ("c", 0)
                    for cins in callee.blocks[0]:
                        if cins.opcode == "ret":
                            if cins.operands:
                                ret_op = sub_op(cins.operands[0])
                            continue
                        new_val = None
                        if cins.value is not None:
                            new_val = next_id[0]
                            next_id[0] += 1
                            vmap[cins.value] = new_val
                        out.append(Instruction(
                            cins.opcode, new_val,
                            tuple(sub_op(o) for o in cins.operands),
                            cins.ty, (), cins.callee, cins.marked))
                    if ins.value is not None:
                        repl[ins.value] = ret_op
                    sites_left -= 1
                    func_changed = True
                    continue
                out.append(ins)
            blocks.append(tuple(out))
        if func_changed:
            func = Function(func.params, tuple(blocks))
            if repl:
                func = _substitute(func, _chase(repl), set())
            changed = True
        new_funcs.append(func)
    if not changed:
        return prog
    return Program(tuple(new_funcs), seed=prog.seed)


# ---------------------------------------------------------------------------
# Pass table: 124 frozen instances.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PassSpec:
    pass_id: int
    template: str
    params: tuple


_TEMPLATE_COUNTS = (
    ("dce", 18),
    ("constmerge", 16),
    ("simplify", 20),
    ("blockmerge", 12),
    ("mark", 10),
    ("sweep", 10),
    ("inline", 12),
    ("cfgsimplify", 10),
    ("noop", 16),
)


def _draw_params(template: str, rng: random.Random) -> tuple:
    if template == "blockmerge":
        return (rng.choice((1, 1, 2, 4, 999)),)
    if template == "sweep":
        if rng.random() < 0.5:
            return (None,)
        return (frozenset(rng.sample(sorted(PURE_OPCODES), rng.randint(2, 4))),)
    if template == "inline":
        return (rng.randint(4, 12), rng.choice((1, 2, 3)))
    if template == "cfgsimplify":
        return (rng.random() < 0.5, rng.choice((1, 1, 2, 3, 999)))
    return ()


def _cycle_sampler(items, rng: random.Random):
    """Draw subsets from a reshuffled cycle so every item gets covered."""
    items = list(items)
    pool: list = []

    def take(k: int) -> frozenset:
        out = []
        for _ in range(k):
            if not pool:
                refill = list(items)
                rng.shuffle(refill)
                pool.extend(refill)
            out.append(pool.pop())
        return frozenset(out)

    return take


def _build_table() -> tuple[PassSpec, ...]:
    names: list[str] = []
    for name, count in _TEMPLATE_COUNTS:
        names.extend([name] * count)
    assert len(names) == NUM_PASSES
    random.Random(0x5EEDFA55).shuffle(names)
    # Narrow opcode subsets keep single passes weak (real cleanup needs a
    # program-specific chain of passes), while the cycling sampler makes
    # sure no opcode is left without a covering pass.
    cyc = random.Random(0xC0FFEE)
    take_pure = _cycle_sampler(sorted(PURE_OPCODES), cyc)
    take_fold = _cycle_sampler(sorted(FOLDABLE_OPCODES), cyc)
    take_patterns = _cycle_sampler(_SIMPLIFY_PATTERNS, cyc)
    table = []
    for pid, name in enumerate(names):
        rng = random.Random(0xD15C0000 + pid)
        if name == "dce":
            params = (take_pure(rng.choice((1, 2, 2, 3))),)
        elif name == "constmerge":
            params = (take_fold(rng.choice((1, 2, 2, 3))),)
        elif name == "simplify":
            params = (take_patterns(rng.randint(1, 2)),)
        elif name == "mark":
            params = (take_fold(rng.randint(2, 4)),)
        else:
            params = _draw_params(name, rng)
        table.append(PassSpec(pid, name, params))
    return tuple(table)


PASS_TABLE: tuple[PassSpec, ...] = _build_table()


def passes_of_template(template: str) -> list[int]:
    return [s.pass_id for s in PASS_TABLE if s.template == template]


def _fixpoint(func: Function, step) -> Function:
    # cascades make one application as deep as a repeated chain, so short
    # specialized pass sequences can match long generic pipelines
    while True:
        nxt = step(func)
        if nxt is func:
            return func
        func = nxt


def _per_function(prog: Program, fn) -> Program:
    funcs = tuple(fn(f) for f in prog.functions)
    if all(a is b for a, b in zip(funcs, prog.functions)):
        return prog
    return Program(funcs, seed=prog.seed)


def apply_pass(p: Program, a: int) -> Program:
    """Apply pass ``a``; pure and deterministic, identity object on no-op."""
    if not 0 <= a < NUM_PASSES:
        raise ValueError(f"pass id out of range: {a}")
    spec = PASS_TABLE[a]
    t = spec.template
    if t == "noop":
        return p
    if t == "dce":
        return _per_function(p, lambda f: _dce(f, spec.params[0]))
    if t == "constmerge":
        return _per_function(p, lambda f: _fixpoint(f, lambda g: _fold_round(g, spec.params[0], False)))
    if t == "simplify":
        return _per_function(p, lambda f: _fixpoint(f, lambda g: _simplify(g, spec.params[0])))
    if t == "blockmerge":
        return _per_function(p, lambda f: _blockmerge(f, spec.params[0]))
    if t == "mark":
        return _per_function(p, lambda f: _mark(f, spec.params[0]))
    if t == "sweep":
        return _per_function(p, lambda f: _sweep(f, spec.params[0]))
    if t == "inline":
        return _inline(p, *spec.params)
    if t == "cfgsimplify":
        return _cfgsimplify(p, *spec.params)
    raise AssertionError(t)
