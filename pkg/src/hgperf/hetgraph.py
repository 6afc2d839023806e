"""Typed heterogeneous graph over problems, algorithms, parameters and runs.

Six node types and five forward relations make up the meta-graph::

    Algorithm      --has-parameter-->                    Parameter
    Parameter      --has-parameter-class-->              ParameterClass
    ParameterClass --controls-algorithm-execution-part--> AlgorithmExecutionPart
    Performance    --has-algorithm-->                    Algorithm
    Performance    --has-problem-->                      Problem

Message passing runs on the graph augmented with reverse relations
(``rev-<name>``, endpoints swapped), which makes it effectively undirected.
"""

from __future__ import annotations

import enum
import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .autodiff import SegmentMap
from .errors import GraphFormatError

N_ELA_FEATURES = 46
FORMAT_VERSION = 1
MASK_NAMES = ("train", "val", "test")


class NodeType(str, enum.Enum):
    PARAMETER = "Parameter"
    PARAMETER_CLASS = "ParameterClass"
    EXECUTION_PART = "AlgorithmExecutionPart"
    ALGORITHM = "Algorithm"
    PERFORMANCE = "Performance"
    PROBLEM = "Problem"

    def __str__(self):
        return self.value


class Relation(NamedTuple):
    name: str
    src: NodeType
    dst: NodeType

    @property
    def is_reverse(self) -> bool:
        return self.name.startswith("rev-")

    def reversed(self) -> "Relation":
        name = self.name[4:] if self.is_reverse else "rev-" + self.name
        return Relation(name, self.dst, self.src)

    def __str__(self):
        return f"{self.src}-[{self.name}]->{self.dst}"


HAS_PARAMETER = Relation("has-parameter", NodeType.ALGORITHM, NodeType.PARAMETER)
HAS_PARAMETER_CLASS = Relation("has-parameter-class", NodeType.PARAMETER, NodeType.PARAMETER_CLASS)
CONTROLS_EXECUTION_PART = Relation(
    "controls-algorithm-execution-part", NodeType.PARAMETER_CLASS, NodeType.EXECUTION_PART
)
HAS_ALGORITHM = Relation("has-algorithm", NodeType.PERFORMANCE, NodeType.ALGORITHM)
HAS_PROBLEM = Relation("has-problem", NodeType.PERFORMANCE, NodeType.PROBLEM)

FORWARD_RELATIONS = (HAS_PARAMETER, HAS_PARAMETER_CLASS, CONTROLS_EXECUTION_PART, HAS_ALGORITHM, HAS_PROBLEM)
REVERSE_RELATIONS = tuple(r.reversed() for r in FORWARD_RELATIONS)
META_RELATIONS = {r.name: r for r in FORWARD_RELATIONS + REVERSE_RELATIONS}


@dataclass(frozen=True)
class GraphSpec:
    """Identifies one graph: problem dimension, budget multiplier, algorithm family."""

    dimension: int
    budget_multiplier: int
    family: str

    DIMENSIONS = (5, 30)
    BUDGETS = (50, 100, 300, 500, 1000, 1500)
    FAMILIES = ("modCMA", "modDE")

    @property
    def budget(self) -> int:
        return self.budget_multiplier * self.dimension

    @property
    def slug(self) -> str:
        return f"{self.family}_D{self.dimension}_B{self.budget_multiplier}"

    @classmethod
    def all(cls) -> list["GraphSpec"]:
        return [cls(d, b, f) for f in cls.FAMILIES for d in cls.DIMENSIONS for b in cls.BUDGETS]


def _empty_edges():
    return np.zeros((0, 2), dtype=np.int64)


@dataclass(eq=False)
class HeteroGraph:
    """Node keys per type, edge index pairs per relation, features, targets, masks.

    Indices are per type and contiguous. ``targets`` and the boolean
    ``masks`` run over Performance nodes; unlabeled nodes carry NaN targets.
    Treat instances as immutable; derive modified copies with ``replace``.
    """

    nodes: dict
    edges: dict
    features: dict = field(default_factory=dict)
    targets: np.ndarray | None = None
    masks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = {NodeType(t): tuple(keys) for t, keys in self.nodes.items()}
        self.edges = {r: np.asarray(e, dtype=np.int64).reshape(-1, 2) for r, e in self.edges.items()}
        self.features = {NodeType(t): np.asarray(x, dtype=np.float64) for t, x in self.features.items()}
        n_perf = self.num_nodes(NodeType.PERFORMANCE)
        if self.targets is None:
            self.targets = np.full(n_perf, np.nan)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        masks = {name: np.zeros(n_perf, dtype=bool) for name in MASK_NAMES}
        masks.update({k: np.asarray(v, dtype=bool).reshape(-1) for k, v in self.masks.items()})
        self.masks = masks

    def num_nodes(self, node_type) -> int:
        return len(self.nodes.get(NodeType(node_type), ()))

    @property
    def node_types(self) -> list[NodeType]:
        return [t for t in NodeType if t in self.nodes]

    @property
    def relations(self) -> list[Relation]:
        return list(self.edges)

    def num_edges(self, relation=None) -> int:
        if relation is not None:
            return len(self.edges[relation])
        return sum(len(e) for e in self.edges.values())

    @property
    def labeled(self) -> np.ndarray:
        return np.isfinite(self.targets)

    def index_of(self, node_type, key: str) -> int:
        return self._key_index[NodeType(node_type)][key]

    @cached_property
    def _key_index(self):
        return {t: {k: i for i, k in enumerate(keys)} for t, keys in self.nodes.items()}

    @cached_property
    def segment_maps(self) -> dict:
        """Per-relation maps from source rows to destination segments."""
        return {
            r: SegmentMap(e[:, 0], e[:, 1], self.num_nodes(r.dst)) for r, e in self.edges.items()
        }

    def with_masks(self, **masks) -> "HeteroGraph":
        merged = dict(self.masks)
        merged.update(masks)
        return replace(self, masks=merged)

    def with_features(self, node_type, values) -> "HeteroGraph":
        feats = dict(self.features)
        feats[NodeType(node_type)] = values
        return replace(self, features=feats)

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        if self.nodes != other.nodes or list(self.edges) != list(other.edges):
            return False
        if any(not _same_bits(self.edges[r], other.edges[r]) for r in self.edges):
            return False
        if set(self.features) != set(other.features):
            return False
        if any(not _same_bits(self.features[t], other.features[t]) for t in self.features):
            return False
        if not _same_bits(self.targets, other.targets):
            return False
        return self.masks.keys() == other.masks.keys() and all(
            _same_bits(self.masks[k], other.masks[k]) for k in self.masks
        )

    __hash__ = None

    def __repr__(self):
        counts = ", ".join(f"{t.value}={len(k)}" for t, k in self.nodes.items())
        return f"HeteroGraph({counts}; edges={self.num_edges()})"


def _same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def validate_metagraph(g: HeteroGraph) -> list[str]:
    """List every way ``g`` departs from the meta-graph; empty means valid."""
    problems = []
    if len(g.node_types) + len(g.edges) <= 2:
        problems.append("graph is not heterogeneous: |T| + |R| <= 2")

    for t, keys in g.nodes.items():
        if len(set(keys)) != len(keys):
            problems.append(f"duplicate node keys among {t} nodes")

    for r, e in g.edges.items():
        expected = META_RELATIONS.get(r.name)
        if expected is None:
            problems.append(f"unknown relation {r.name!r}")
            continue
        if (r.src, r.dst) != (expected.src, expected.dst):
            problems.append(
                f"relation {r.name!r} connects {r.src} -> {r.dst}, "
                f"meta-graph requires {expected.src} -> {expected.dst}"
            )
            continue
        if r.is_reverse and r.reversed() not in g.edges:
            problems.append(f"reverse relation {r.name!r} without its forward relation")
        if len(e):
            for col, t in ((0, r.src), (1, r.dst)):
                n = g.num_nodes(t)
                bad = np.flatnonzero((e[:, col] < 0) | (e[:, col] >= n))
                if bad.size:
                    side = "source" if col == 0 else "destination"
                    problems.append(
                        f"relation {r.name!r}: {bad.size} edge(s) with {side} index out of range for {n} {t} nodes"
                    )

    n_perf = g.num_nodes(NodeType.PERFORMANCE)
    for rel in (HAS_ALGORITHM, HAS_PROBLEM):
        e = g.edges.get(rel, _empty_edges())
        src = e[:, 0]
        src = src[(src >= 0) & (src < n_perf)]
        counts = np.bincount(src, minlength=n_perf)
        for p in np.flatnonzero(counts != 1):
            problems.append(
                f"Performance node {g.nodes[NodeType.PERFORMANCE][p]!r} has {counts[p]} {rel.name} edges, expected 1"
            )

    if g.targets.shape != (n_perf,):
        problems.append(f"targets have length {g.targets.size}, expected {n_perf}")
    for name, m in g.masks.items():
        if m.shape != (n_perf,):
            problems.append(f"mask {name!r} has length {m.size}, expected {n_perf}")
    if all(m.shape == (n_perf,) for m in g.masks.values()) and g.targets.shape == (n_perf,):
        names = list(g.masks)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                overlap = int((g.masks[a] & g.masks[b]).sum())
                if overlap:
                    problems.append(f"masks {a!r} and {b!r} overlap on {overlap} nodes")
            unlabeled = int((g.masks[a] & ~g.labeled).sum())
            if unlabeled:
                problems.append(f"mask {a!r} selects {unlabeled} unlabeled nodes")

    for t, x in g.features.items():
        if x.ndim != 2 or x.shape[0] != g.num_nodes(t):
            problems.append(f"{t} feature matrix has shape {x.shape} for {g.num_nodes(t)} nodes")
    prob = g.features.get(NodeType.PROBLEM)
    if g.num_nodes(NodeType.PROBLEM):
        if prob is None:
            problems.append("Problem nodes have no feature matrix")
        elif prob.ndim == 2 and prob.shape[1] != N_ELA_FEATURES:
            problems.append(f"Problem features have {prob.shape[1]} columns, expected {N_ELA_FEATURES}")
    return problems


def add_reverse_relations(g: HeteroGraph) -> HeteroGraph:
    """Return a copy with a flipped ``rev-`` relation for every forward one."""
    if any(r.is_reverse for r in g.edges):
        raise ValueError("graph already contains reverse relations")
    edges = dict(g.edges)
    for r, e in g.edges.items():
        edges[r.reversed()] = e[:, ::-1].copy()
    return replace(g, edges=edges)


def drop_reverse_relations(g: HeteroGraph) -> HeteroGraph:
    return replace(g, edges={r: e for r, e in g.edges.items() if not r.is_reverse})


def neighbors(g: HeteroGraph, relation, index: int) -> list[int]:
    """Indices of the nodes reached from node ``index`` along ``relation``.

    ``index`` refers to a node of the relation's source type; results are
    destination-type indices in edge insertion order. Incoming neighbours of
    a node are therefore ``neighbors(g, relation.reversed(), index)``.
    """
    if isinstance(relation, str):
        matches = [r for r in g.edges if r.name == relation]
        if not matches:
            raise KeyError(f"graph has no relation {relation!r}")
        relation = matches[0]
    if relation not in g.edges:
        raise KeyError(f"graph has no relation {relation}")
    n = g.num_nodes(relation.src)
    if not 0 <= index < n:
        raise IndexError(f"{relation.src} index {index} out of range for {n} nodes")
    e = g.edges[relation]
    return e[e[:, 0] == index, 1].tolist()


# ---------------------------------------------------------------------------
# text serialisation
#
#   hgraph <version>
#   nodes <Type> <count>            then <count> lines of JSON-quoted keys
#   relation <name> <Src> <Dst> <count>   then <count> lines "<src> <dst>"
#   features <Type> <rows> <cols>   then <rows> lines of hex floats
#   targets <count>                 then one line of hex floats
#   mask <name> <count>             then one line of 0/1 characters
#   end
#
# Floats are written with float.hex so a round trip is bit-exact.


def _hex_row(values) -> str:
    return " ".join(float(v).hex() for v in values)


def dumps(g: HeteroGraph) -> str:
    out = [f"hgraph {FORMAT_VERSION}"]
    for t in g.node_types:
        keys = g.nodes[t]
        out.append(f"nodes {t.value} {len(keys)}")
        out.extend(json.dumps(k) for k in keys)
    for r, e in g.edges.items():
        out.append(f"relation {r.name} {r.src.value} {r.dst.value} {len(e)}")
        out.extend(f"{a} {b}" for a, b in e.tolist())
    for t in g.node_types:
        if t in g.features:
            x = g.features[t]
            out.append(f"features {t.value} {x.shape[0]} {x.shape[1]}")
            out.extend(_hex_row(row) for row in x)
    out.append(f"targets {g.targets.size}")
    out.append(_hex_row(g.targets))
    for name, m in g.masks.items():
        out.append(f"mask {name} {m.size}")
        out.append("".join("1" if v else "0" for v in m))
    out.append("end")
    return "\n".join(out) + "\n"


def save(g: HeteroGraph, path) -> None:
    """Write ``g`` atomically to ``path``."""
    text = dumps(g)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".hg")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Lines:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise GraphFormatError(f"unexpected end of file at line {self.pos + 1}: expected {what}")
        self.pos += 1
        return self.lines[self.pos - 1]

    def fail(self, message: str):
        raise GraphFormatError(f"line {self.pos}: {message}")


def _node_type(lines: _Lines, name: str) -> NodeType:
    try:
        return NodeType(name)
    except ValueError:
        lines.fail(f"unknown node type {name!r}")


def _count(lines: _Lines, token: str) -> int:
    try:
        n = int(token)
    except ValueError:
        lines.fail(f"expected a count, got {token!r}")
    if n < 0:
        lines.fail(f"negative count {n}")
    return n


def _floats(lines: _Lines, line: str, expected: int) -> list[float]:
    tokens = line.split()
    if len(tokens) != expected:
        lines.fail(f"expected {expected} values, got {len(tokens)}")
    try:
        return [float.fromhex(tok) for tok in tokens]
    except ValueError as exc:
        lines.fail(f"bad float value ({exc})")


def loads(text: str) -> HeteroGraph:
    lines = _Lines(text)
    header = lines.next("header").split()
    if len(header) != 2 or header[0] != "hgraph":
        lines.fail("missing 'hgraph <version>' header")
    if header[1] != str(FORMAT_VERSION):
        lines.fail(f"unsupported format version {header[1]!r}")

    nodes, edges, features, masks = {}, {}, {}, {}
    targets = None
    while True:
        line = lines.next("a section header or 'end'")
        parts = line.split()
        if not parts:
            lines.fail("blank line")
        kind = parts[0]
        if kind == "end":
            if len(parts) != 1:
                lines.fail("trailing tokens after 'end'")
            break
        if kind == "nodes" and len(parts) == 3:
            t = _node_type(lines, parts[1])
            keys = []
            for _ in range(_count(lines, parts[2])):
                raw = lines.next(f"{t} node key")
                try:
                    key = json.loads(raw)
                except json.JSONDecodeError:
                    lines.fail(f"malformed node key {raw!r}")
                if not isinstance(key, str):
                    lines.fail(f"node key must be a string, got {raw!r}")
                keys.append(key)
            nodes[t] = keys
        elif kind == "relation" and len(parts) == 5:
            rel = Relation(parts[1], _node_type(lines, parts[2]), _node_type(lines, parts[3]))
            pairs = []
            for _ in range(_count(lines, parts[4])):
                tokens = lines.next(f"edge of {rel.name}").split()
                if len(tokens) != 2:
                    lines.fail(f"edge of {rel.name!r} needs 2 indices")
                try:
                    pairs.append((int(tokens[0]), int(tokens[1])))
                except ValueError:
                    lines.fail(f"non-integer edge index in {rel.name!r}")
            edges[rel] = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        elif kind == "features" and len(parts) == 4:
            t = _node_type(lines, parts[1])
            rows, cols = _count(lines, parts[2]), _count(lines, parts[3])
            data = [_floats(lines, lines.next(f"{t} feature row"), cols) for _ in range(rows)]
            features[t] = np.array(data, dtype=np.float64).reshape(rows, cols)
        elif kind == "targets" and len(parts) == 2:
            n = _count(lines, parts[1])
            targets = np.array(_floats(lines, lines.next("target values"), n), dtype=np.float64)
        elif kind == "mask" and len(parts) == 3:
            n = _count(lines, parts[2])
            raw = lines.next(f"mask {parts[1]}")
            if len(raw) != n or set(raw) - {"0", "1"}:
                lines.fail(f"mask {parts[1]!r} must be {n} characters of 0/1")
            masks[parts[1]] = np.frombuffer(raw.encode(), dtype=np.uint8) == ord("1")
        else:
            lines.fail(f"unrecognised section {line!r}")
    if lines.pos != len(lines.lines):
        raise GraphFormatError(f"line {lines.pos + 1}: content after 'end'")

    n_perf = len(nodes.get(NodeType.PERFORMANCE, ()))
    if targets is not None and targets.size != n_perf:
        raise GraphFormatError(f"{targets.size} targets for {n_perf} Performance nodes")
    for name, m in masks.items():
        if m.size != n_perf:
            raise GraphFormatError(f"mask {name!r} covers {m.size} nodes, expected {n_perf}")
    return HeteroGraph(nodes=nodes, edges=edges, features=features, targets=targets, masks=masks)


def load(path) -> HeteroGraph:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
