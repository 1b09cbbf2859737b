"""Typed program multigraphs: construction, type expansion, vocabulary.

Nodes are instructions, variables, constants, and (after expansion) type
nodes; edges carry a flow kind (control / data / call / type) and an
integer position. Composite operand types start out as a single text token
on the variable node, e.g. ``rec(i32,ptr(f32))``; ``expand_type_graph``
rewrites every such node into a shared type subgraph whose leaves are
primitive tokens, which is what keeps the vocabulary closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .synthenv import Program
from .synthenv.program import PURE_POOL, TypeDesc
from .synthenv.program import parse_type as parse_type_token

__all__ = [
    "GraphNode",
    "GraphEdge",
    "ProgramGraph",
    "Vocabulary",
    "build_graph",
    "expand_type_graph",
    "build_vocabulary",
    "block_relpos",
    "clamp_edge_position",
    "mixup",
    "flat_features",
    "FLAT_FEATURE_DIM",
    "graph_to_json",
    "graph_from_json",
]

NODE_KINDS = ("instruction", "variable", "constant", "type")
EDGE_FLOWS = ("call", "control", "data", "type")
MAX_EDGE_POSITION = 32
FLAT_FEATURE_DIM = 56

CONST_TYPE_TOKEN = "i64"  # literals are untyped in the IR; modeled as i64


@dataclass(frozen=True)
class GraphNode:
    kind: str
    text: str
    function_idx: int = -1
    block_idx: int = -1


@dataclass(frozen=True)
class GraphEdge:
    flow: str
    position: int
    src: int
    dst: int


@dataclass(frozen=True)
class ProgramGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.nodes)
        for e in self.edges:
            assert 0 <= e.src < n and 0 <= e.dst < n, "dangling edge endpoint"


def build_graph(p: Program) -> ProgramGraph:
    """ProGraML-style extraction from the synthetic IR.

    One instruction node per instruction; variable nodes per defined value
    and per function parameter (text = type token); shared constant nodes
    per literal; control edges follow block order and branch targets; data
    edges run definition -> variable -> use; call edges run call site ->
    callee entry.
    """
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    instr_node: dict[tuple[int, int, int], int] = {}
    value_node: dict[int, int] = {}
    const_node: dict[int, int] = {}
    entry_instr: list[int] = []
    global_block = 0
    block_base: dict[tuple[int, int], int] = {}

    for fi, func in enumerate(p.functions):
        for bi in range(len(func.blocks)):
            block_base[(fi, bi)] = global_block
            global_block += 1

    # nodes for instructions, defined values, params
    param_node: dict[tuple[int, int], int] = {}
    for fi, func in enumerate(p.functions):
        entry_block = block_base[(fi, 0)]
        for k, ty in enumerate(func.params):
            param_node[(fi, k)] = len(nodes)
            nodes.append(GraphNode("variable", ty.token(), fi, entry_block))
        for bi, block in enumerate(func.blocks):
            gb = block_base[(fi, bi)]
            for ii, ins in enumerate(block):
                idx = len(nodes)
                instr_node[(fi, bi, ii)] = idx
                nodes.append(GraphNode("instruction", ins.opcode, fi, gb))
                if bi == 0 and ii == 0:
                    entry_instr.append(idx)
                if ins.value is not None:
                    vidx = len(nodes)
                    value_node[ins.value] = vidx
                    nodes.append(GraphNode("variable", ins.ty.token(), fi, gb))
                    edges.append(GraphEdge("data", 0, idx, vidx))

    for fi, func in enumerate(p.functions):
        for bi, block in enumerate(func.blocks):
            for ii, ins in enumerate(block):
                idx = instr_node[(fi, bi, ii)]
                # operand uses
                for pos, op in enumerate(ins.operands):
                    if op[0] == "v":
                        edges.append(GraphEdge("data", pos, value_node[op[1]], idx))
                    elif op[0] == "p":
                        edges.append(GraphEdge("data", pos, param_node[(fi, op[1])], idx))
                    else:
                        cidx = const_node.get(op[1])
                        if cidx is None:
                            cidx = len(nodes)
                            const_node[op[1]] = cidx
                            nodes.append(GraphNode(
                                "constant", CONST_TYPE_TOKEN, fi,
                                nodes[idx].block_idx))
                        edges.append(GraphEdge("data", pos, cidx, idx))
                # control flow
                if ii + 1 < len(block):
                    edges.append(GraphEdge("control", 0, idx, instr_node[(fi, bi, ii + 1)]))
                for t_pos, target in enumerate(ins.targets):
                    edges.append(GraphEdge(
                        "control", t_pos, idx, instr_node[(fi, target, 0)]))
                if ins.callee is not None:
                    edges.append(GraphEdge("call", 0, idx, entry_instr[ins.callee]))

    return ProgramGraph(tuple(nodes), tuple(edges))


def _type_subgraph(ty: TypeDesc, nodes, edges, cache) -> int:
    """Shared type node for ``ty``; built recursively, deduplicated per graph."""
    token = ty.token()
    if token in cache:
        return cache[token]
    if ty.kind == "prim":
        idx = len(nodes)
        nodes.append(GraphNode("type", ty.name))
    elif ty.kind in ("ptr", "arr"):
        inner = _type_subgraph(ty.elems[0], nodes, edges, cache)
        idx = len(nodes)
        nodes.append(GraphNode("type", "pointer" if ty.kind == "ptr" else "array"))
        edges.append(GraphEdge("type", 0, inner, idx))
    else:  # record
        members = [_type_subgraph(t, nodes, edges, cache) for t in ty.elems]
        idx = len(nodes)
        nodes.append(GraphNode("type", "record"))
        for pos, member in enumerate(members):
            edges.append(GraphEdge("type", pos, member, idx))
    cache[token] = idx
    return idx


def expand_type_graph(g: ProgramGraph) -> ProgramGraph:
    """Move type information off variable/constant nodes into type subgraphs.

    Every variable/constant node keeps only a generic token afterwards, and
    its declared type becomes a chain such as [variable] <- [pointer] <-
    [pointed-type]; distinct declared types share one subgraph per graph.
    """
    nodes = list(g.nodes)
    edges = list(g.edges)
    cache: dict[str, int] = {}
    for idx, node in enumerate(g.nodes):
        if node.kind not in ("variable", "constant"):
            continue
        ty = parse_type_token(node.text)
        root = _type_subgraph(ty, nodes, edges, cache)
        nodes[idx] = GraphNode(
            "variable" if node.kind == "variable" else "constant",
            "var" if node.kind == "variable" else "const",
            node.function_idx, node.block_idx)
        edges.append(GraphEdge("type", 0, root, idx))
    return ProgramGraph(tuple(nodes), tuple(edges), g.values)


def block_relpos(e: GraphEdge, nodes) -> int:
    """Sign of the block-index difference between edge endpoints."""
    diff = nodes[e.src].block_idx - nodes[e.dst].block_idx
    return (diff > 0) - (diff < 0)


def clamp_edge_position(pos: int) -> int:
    return min(pos, MAX_EDGE_POSITION)


def mixup(g1: ProgramGraph, g2: ProgramGraph) -> ProgramGraph:
    """Disjoint union with elementwise-summed value vectors."""
    if g1.values is None or g2.values is None:
        raise InputError("mixup requires value vectors on both graphs")
    if len(g1.values) != len(g2.values):
        raise InputError("mixup requires equal-length value vectors")
    shift = len(g1.nodes)
    edges = g1.edges + tuple(
        GraphEdge(e.flow, e.position, e.src + shift, e.dst + shift) for e in g2.edges
    )
    values = tuple(a + b for a, b in zip(g1.values, g2.values))
    return ProgramGraph(g1.nodes + g2.nodes, edges, values)


class Vocabulary:
    """Token -> id map over training-graph text fields; id 0 is unknown."""

    UNKNOWN_ID = 0

    def __init__(self, token_to_id: dict[str, int] | None = None):
        self.token_to_id_ = dict(token_to_id) if token_to_id else None

    def fit(self, graphs) -> "Vocabulary":
        tokens = sorted({n.text for g in graphs for n in g.nodes})
        self.token_to_id_ = {t: i + 1 for i, t in enumerate(tokens)}
        return self

    def __len__(self) -> int:
        return len(self.token_to_id_) + 1  # unknown included

    def encode(self, token: str) -> int:
        return self.token_to_id_.get(token, self.UNKNOWN_ID)

    def encode_graph(self, g: ProgramGraph) -> np.ndarray:
        return np.array([self.encode(n.text) for n in g.nodes], dtype=np.int64)

    def to_json(self) -> str:
        items = sorted(self.token_to_id_.items(), key=lambda kv: kv[1])
        return json.dumps({"tokens": [t for t, _ in items]})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        tokens = json.loads(text)["tokens"]
        return cls({t: i + 1 for i, t in enumerate(tokens)})


def build_vocabulary(graphs) -> Vocabulary:
    if not graphs:
        raise InputError("cannot build a vocabulary from zero graphs")
    return Vocabulary().fit(graphs)


# ---------------------------------------------------------------------------
# Flat feature encoding (fixed 56-dim integer summary; the MLP baseline input).
# Index 3 (max block length) is the only non-additive entry under program
# union; everything else is a plain counter.
# ---------------------------------------------------------------------------

_FLAT_OPCODES = tuple(PURE_POOL) + ("alloca", "load", "store", "call", "br", "condbr", "ret")
_OPCODE_BASE = 13
MAX_BLOCK_FEATURE_INDEX = 3


def flat_features(p: Program) -> np.ndarray:
    feat = np.zeros(FLAT_FEATURE_DIM, dtype=np.int64)
    feat[0] = p.instruction_count
    feat[1] = sum(len(f.blocks) for f in p.functions)
    feat[2] = len(p.functions)
    feat[3] = max(len(b) for f in p.functions for b in f.blocks)
    feat[4] = sum(len(f.params) for f in p.functions)
    opcode_index = {op: _OPCODE_BASE + i for i, op in enumerate(_FLAT_OPCODES)}
    n_const = n_value_ops = n_composite = n_ptr = n_rec = n_arr = 0
    back_edges = marked = ret_with_value = operand_total = 0
    for f in p.functions:
        for bi, block in enumerate(f.blocks):
            for ins in block:
                idx = opcode_index.get(ins.opcode)
                if idx is not None:
                    feat[idx] += 1
                operand_total += len(ins.operands)
                for op in ins.operands:
                    if op[0] == "c":
                        n_const += 1
                    elif op[0] == "v":
                        n_value_ops += 1
                if ins.value is not None:
                    if ins.ty.is_composite:
                        n_composite += 1
                    if ins.ty.kind == "ptr":
                        n_ptr += 1
                    elif ins.ty.kind == "rec":
                        n_rec += 1
                    elif ins.ty.kind == "arr":
                        n_arr += 1
                if ins.marked:
                    marked += 1
                if ins.opcode == "ret" and ins.operands:
                    ret_with_value += 1
                back_edges += sum(1 for t in ins.targets if t <= bi)
    feat[5] = n_const
    feat[6] = n_value_ops
    feat[7] = n_composite
    feat[8] = n_ptr
    feat[9] = n_rec
    feat[10] = n_arr
    feat[11] = back_edges
    feat[12] = marked
    feat[_OPCODE_BASE + len(_FLAT_OPCODES)] = operand_total
    feat[_OPCODE_BASE + len(_FLAT_OPCODES) + 1] = ret_with_value
    return feat


# ---------------------------------------------------------------------------
# JSON serialization; also the ingestion format for externally built graphs.
# ---------------------------------------------------------------------------

def graph_to_json(g: ProgramGraph) -> str:
    doc = {
        "nodes": [
            {"kind": n.kind, "text": n.text, "function": n.function_idx,
             "block": n.block_idx}
            for n in g.nodes
        ],
        "edges": [
            {"flow": e.flow, "position": e.position, "src": e.src, "dst": e.dst}
            for e in g.edges
        ],
        "values": None if g.values is None else list(g.values),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def graph_from_json(text: str) -> ProgramGraph:
    try:
        doc = json.loads(text)
        nodes = tuple(
            GraphNode(n["kind"], n["text"], n["function"], n["block"])
            for n in doc["nodes"]
        )
        edges = tuple(
            GraphEdge(e["flow"], e["position"], e["src"], e["dst"])
            for e in doc["edges"]
        )
        for n in nodes:
            if n.kind not in NODE_KINDS:
                raise FormatError(f"unknown node kind {n.kind!r}")
        for e in edges:
            if e.flow not in EDGE_FLOWS:
                raise FormatError(f"unknown edge flow {e.flow!r}")
        values = doc["values"]
        return ProgramGraph(
            nodes, edges, None if values is None else tuple(float(v) for v in values)
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed graph JSON: {exc}") from exc
