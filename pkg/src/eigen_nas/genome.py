"""Architecture genome: an acyclic graph of layer nodes.

The node with in-degree zero consumes the input image. Every graph ends in
``GlobalPool -> Classifier``. Genomes are immutable; mutation operators build
new ones.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Union

CHANNEL_CHOICES = (16, 32, 48, 64, 96)
KERNEL_CHOICES = (1, 3)
STRIDE_CHOICES = (1, 2)


class GenomeError(Exception):
    """Base class for structural problems with a genome."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class ShapeMismatch(GenomeError):
    pass


class DegenerateShape(GenomeError):
    pass


class CyclicGraph(GenomeError):
    pass


class ParseError(GenomeError):
    pass


class InvalidGenome(GenomeError):
    """Raised by :func:`decode_genome` when the record parses but fails validation."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class TensorShape(NamedTuple):
    """Activation shape without the batch axis: depth x width x height."""

    depth: int
    width: int
    height: int

    @classmethod
    def of(cls, depth: int, width: int, height: int) -> "TensorShape":
        for name, value in (("depth", depth), ("width", width), ("height", height)):
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"TensorShape.{name} must be a positive integer, got {value!r}")
        return cls(depth, width, height)

    @property
    def spatial(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __str__(self):
        return f"{self.depth}x{self.width}x{self.height}"


@dataclass(frozen=True)
class Conv:
    channels: int = 32
    kernel: int = 3
    stride: int = 1
    name = "conv"


@dataclass(frozen=True)
class Pool:
    kernel: int = 2
    stride: int = 2
    name = "pool"


@dataclass(frozen=True)
class Concat:
    name = "concat"


@dataclass(frozen=True)
class GlobalPool:
    name = "global_pool"


@dataclass(frozen=True)
class Classifier:
    num_classes: int
    name = "classifier"


LayerKind = Union[Conv, Pool, Concat, GlobalPool, Classifier]
_KIND_BY_NAME = {k.name: k for k in (Conv, Pool, Concat, GlobalPool, Classifier)}


@dataclass(frozen=True)
class Node:
    id: int
    kind: LayerKind


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    nodes: tuple[int, ...] = ()

    def __str__(self):
        where = f" at {list(self.nodes)}" if self.nodes else ""
        return f"{self.code}{where}: {self.message}"


@dataclass(frozen=True, eq=False)
class Genome:
    nodes: tuple[Node, ...]
    edges: frozenset[tuple[int, int]]
    input_shape: TensorShape
    num_classes: int
    # Lower bound for fresh node ids; ids are never reused within a lineage.
    next_id: int = field(default=0)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        object.__setattr__(self, "nodes", nodes)
        if not isinstance(self.edges, frozenset):
            object.__setattr__(self, "edges", frozenset(self.edges))
        top = max((n.id for n in nodes), default=-1) + 1
        if self.next_id < top:
            object.__setattr__(self, "next_id", top)

    def __eq__(self, other):
        if not isinstance(other, Genome):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.input_shape == other.input_shape
            and self.num_classes == other.num_classes
        )

    def __hash__(self):
        return hash((self.nodes, self.edges, self.input_shape, self.num_classes))

    @cached_property
    def kinds(self) -> dict[int, LayerKind]:
        return {n.id: n.kind for n in self.nodes}

    @cached_property
    def preds(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            if b in out:
                out[b].append(a)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def succs(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            if a in out:
                out[a].append(b)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def ids_of(self, kind: type) -> list[int]:
        return [n.id for n in self.nodes if type(n.kind) is kind]

    @property
    def input_node(self) -> int:
        roots = [i for i, p in self.preds.items() if not p and type(self.kinds[i]) is not Classifier]
        if len(roots) != 1:
            raise GenomeError(f"expected exactly one input node, found {roots}")
        return roots[0]

    @property
    def classifier(self) -> int:
        ids = self.ids_of(Classifier)
        if len(ids) != 1:
            raise GenomeError(f"expected exactly one classifier, found {ids}")
        return ids[0]

    def replace(self, nodes: Iterable[Node], edges: Iterable[tuple[int, int]], next_id: int | None = None) -> "Genome":
        return Genome(
            nodes=tuple(nodes),
            edges=frozenset(edges),
            input_shape=self.input_shape,
            num_classes=self.num_classes,
            next_id=self.next_id if next_id is None else next_id,
        )

    def __repr__(self):
        parts = []
        for n in self.nodes:
            k = n.kind
            if isinstance(k, Conv):
                parts.append(f"{n.id}:conv{k.channels}k{k.kernel}s{k.stride}")
            else:
                parts.append(f"{n.id}:{k.name}")
        return f"Genome([{', '.join(parts)}], edges={sorted(self.edges)})"


def new_seed_genome(input_shape: TensorShape, num_classes: int) -> Genome:
    """The minimal network: input -> global pooling -> linear classifier."""
    if not isinstance(input_shape, TensorShape):
        raise TypeError("input_shape must be a TensorShape")
    input_shape = TensorShape.of(*input_shape)
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    nodes = (Node(0, GlobalPool()), Node(1, Classifier(num_classes)))
    return Genome(nodes, frozenset({(0, 1)}), input_shape, num_classes, next_id=2)


def topological_order(genome: Genome) -> list[int]:
    """Kahn's algorithm, ties broken by ascending node id."""
    preds, succs = genome.preds, genome.succs
    indeg = {i: len(p) for i, p in preds.items()}
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in succs[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != len(indeg):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise CyclicGraph(f"graph has a cycle through nodes {stuck}")
    return order


def _conv_out(size: int, stride: int) -> int:
    return -(-size // stride)


def infer_shapes(genome: Genome, order: list[int] | None = None) -> dict[int, TensorShape]:
    """Output shape of every node.

    Convolutions use SAME padding (``ceil(in / stride)``), pooling is ceil-mode
    2x2/2, concatenation stacks depth, global pooling collapses to 1x1 and the
    classifier is recorded as ``num_classes x 1 x 1``.
    """
    if order is None:
        order = topological_order(genome)
    kinds, preds = genome.kinds, genome.preds
    shapes: dict[int, TensorShape] = {}
    for i in order:
        kind = kinds[i]
        ins = [shapes[p] for p in preds[i]]
        if not ins:
            if isinstance(kind, Concat):
                raise GenomeError(f"concat node {i} has no inputs")
            ins = [genome.input_shape]
        if isinstance(kind, Concat):
            if len(ins) != 2:
                raise GenomeError(f"concat node {i} needs exactly 2 inputs, has {len(ins)}")
            a, b = ins
            if a.spatial != b.spatial:
                raise ShapeMismatch(f"concat node {i} joins {a} and {b}", node=i)
            shapes[i] = TensorShape(a.depth + b.depth, a.width, a.height)
            continue
        if len(ins) != 1:
            raise GenomeError(f"node {i} ({kind.name}) needs exactly 1 input, has {len(ins)}")
        (x,) = ins
        if isinstance(kind, Conv):
            w, h = _conv_out(x.width, kind.stride), _conv_out(x.height, kind.stride)
            depth = kind.channels
        elif isinstance(kind, Pool):
            w, h = _conv_out(x.width, kind.stride), _conv_out(x.height, kind.stride)
            depth = x.depth
        elif isinstance(kind, GlobalPool):
            w, h, depth = 1, 1, x.depth
        elif isinstance(kind, Classifier):
            w, h, depth = 1, 1, kind.num_classes
        else:
            raise GenomeError(f"unknown layer kind {kind!r}")
        if w < 1 or h < 1:
            raise DegenerateShape(f"node {i} output spatial {w}x{h}", node=i)
        shapes[i] = TensorShape(depth, w, h)
    return shapes


def _check_kind(kind: LayerKind, num_classes: int) -> str | None:
    if isinstance(kind, Conv):
        if kind.channels not in CHANNEL_CHOICES:
            return f"conv channels {kind.channels} not in {CHANNEL_CHOICES}"
        if kind.kernel not in KERNEL_CHOICES:
            return f"conv kernel {kind.kernel} not in {KERNEL_CHOICES}"
        if kind.stride not in STRIDE_CHOICES:
            return f"conv stride {kind.stride} not in {STRIDE_CHOICES}"
    elif isinstance(kind, Pool):
        if (kind.kernel, kind.stride) != (2, 2):
            return "pooling must be 2x2 with stride 2"
    elif isinstance(kind, Classifier):
        if kind.num_classes != num_classes:
            return f"classifier has {kind.num_classes} classes, genome declares {num_classes}"
    elif not isinstance(kind, (Concat, GlobalPool)):
        return f"unknown layer kind {kind!r}"
    return None


def validate(genome: Genome) -> list[Violation]:
    """Every violated genome invariant; an empty list means the genome is valid."""
    out: list[Violation] = []
    kinds = genome.kinds
    if len(kinds) != len(genome.nodes):
        out.append(Violation("DuplicateId", "node ids are not unique"))
    for a, b in sorted(genome.edges):
        if a not in kinds or b not in kinds:
            out.append(Violation("UnknownNode", f"edge ({a}, {b}) references a missing node", (a, b)))
        elif a == b:
            out.append(Violation("CyclicGraph", "self loop", (a,)))
    if out:
        return out
    for n in genome.nodes:
        msg = _check_kind(n.kind, genome.num_classes)
        if msg:
            out.append(Violation("InvalidKind", msg, (n.id,)))

    preds, succs = genome.preds, genome.succs
    classifiers = genome.ids_of(Classifier)
    if len(classifiers) != 1:
        out.append(Violation("ClassifierCount", f"expected exactly one classifier, found {len(classifiers)}", tuple(classifiers)))
    for c in classifiers:
        if succs[c]:
            out.append(Violation("ClassifierOutput", "classifier must have out-degree 0", (c,)))
        if len(preds[c]) != 1 or not isinstance(kinds[preds[c][0]], GlobalPool):
            out.append(Violation("ClassifierInput", "classifier must have exactly one GlobalPool predecessor", (c,)))

    roots = [i for i in kinds if not preds[i] and not isinstance(kinds[i], Classifier)]
    if len(roots) != 1:
        out.append(Violation("InputCount", f"expected exactly one input node, found {len(roots)}", tuple(sorted(roots))))
    for i, kind in kinds.items():
        d = len(preds[i])
        if isinstance(kind, Concat):
            if d != 2:
                out.append(Violation("InDegree", f"concat needs in-degree 2, has {d}", (i,)))
        elif isinstance(kind, Classifier):
            continue
        elif d > 1:
            out.append(Violation("InDegree", f"{kind.name} needs in-degree 1, has {d}", (i,)))

    try:
        order = topological_order(genome)
    except CyclicGraph as e:
        out.append(Violation("CyclicGraph", str(e)))
        return out

    if len(classifiers) == 1:
        alive = {classifiers[0]}
        stack = [classifiers[0]]
        while stack:
            for p in preds[stack.pop()]:
                if p not in alive:
                    alive.add(p)
                    stack.append(p)
        dead = sorted(set(kinds) - alive)
        if dead:
            out.append(Violation("DeadNode", "nodes with no path to the classifier", tuple(dead)))

    if out:
        return out
    try:
        infer_shapes(genome, order)
    except GenomeError as e:
        code = type(e).__name__ if isinstance(e, (ShapeMismatch, DegenerateShape)) else "InvalidStructure"
        out.append(Violation(code, str(e), () if e.node is None else (e.node,)))
    return out


def is_valid(genome: Genome) -> bool:
    return not validate(genome)


def count_params(genome: Genome, shapes: dict[int, TensorShape] | None = None) -> int:
    """Learnable parameters: conv weights + bias + BN scale/shift, and the linear head."""
    if shapes is None:
        shapes = infer_shapes(genome)
    preds = genome.preds
    total = 0
    for n in genome.nodes:
        k = n.kind
        if isinstance(k, Conv):
            d_in = shapes[preds[n.id][0]].depth if preds[n.id] else genome.input_shape.depth
            total += k.kernel * k.kernel * d_in * k.channels + 3 * k.channels
        elif isinstance(k, Classifier):
            d_in = shapes[preds[n.id][0]].depth
            total += d_in * k.num_classes + k.num_classes
    return total


def depth_of(genome: Genome) -> int:
    """Length (in layers, excluding the classifier) of the longest input-to-output path."""
    longest: dict[int, int] = {}
    preds = genome.preds
    for i in topological_order(genome):
        longest[i] = 1 + max((longest[p] for p in preds[i]), default=0)
    return longest[genome.classifier] - 1


# -- records ---------------------------------------------------------------

def _kind_params(kind: LayerKind) -> dict:
    if isinstance(kind, Conv):
        return {"channels": kind.channels, "kernel": kind.kernel, "stride": kind.stride}
    if isinstance(kind, Pool):
        return {"kernel": kind.kernel, "stride": kind.stride}
    if isinstance(kind, Classifier):
        return {"num_classes": kind.num_classes}
    return {}


def genome_to_record(genome: Genome) -> dict:
    s = genome.input_shape
    return {
        "input_shape": [s.depth, s.width, s.height],
        "num_classes": genome.num_classes,
        "next_id": genome.next_id,
        "nodes": [{"id": n.id, "kind": n.kind.name, "params": _kind_params(n.kind)} for n in genome.nodes],
        "edges": [[a, b] for a, b in sorted(genome.edges)],
    }


def genome_from_record(record: dict, check: bool = True) -> Genome:
    try:
        d, w, h = record["input_shape"]
        shape = TensorShape.of(int(d), int(w), int(h))
        num_classes = int(record["num_classes"])
        nodes = []
        for entry in record["nodes"]:
            cls = _KIND_BY_NAME[entry["kind"]]
            params = entry.get("params") or {}
            nodes.append(Node(int(entry["id"]), cls(**{k: int(v) for k, v in params.items()})))
        edges = frozenset((int(a), int(b)) for a, b in record["edges"])
        next_id = int(record.get("next_id", 0))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed genome record: {e!r}") from e
    genome = Genome(tuple(nodes), edges, shape, num_classes, next_id)
    if check:
        violations = validate(genome)
        if violations:
            raise InvalidGenome(violations)
    return genome


def encode_genome(genome: Genome) -> str:
    """Deterministic JSON text; nodes sorted by id, edges sorted."""
    return json.dumps(genome_to_record(genome), sort_keys=True, separators=(",", ":"))


def decode_genome(text: str) -> Genome:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"not a JSON document: {e}") from e
    if not isinstance(record, dict):
        raise ParseError("genome record must be a JSON object")
    return genome_from_record(record)


def relabel(genome: Genome, mapping: dict[int, int]) -> Genome:
    """Same graph with node ids renamed through ``mapping``."""
    nodes = tuple(Node(mapping[n.id], n.kind) for n in genome.nodes)
    edges = frozenset((mapping[a], mapping[b]) for a, b in genome.edges)
    return Genome(nodes, edges, genome.input_shape, genome.num_classes)

