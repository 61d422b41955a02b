"""Mutation operators, step-size driven child generation and block duplication."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .genome import (
    CHANNEL_CHOICES,
    KERNEL_CHOICES,
    STRIDE_CHOICES,
    Classifier,
    Concat,
    Conv,
    Genome,
    GenomeError,
    GlobalPool,
    Node,
    Pool,
    count_params,
    infer_shapes,
    topological_order,
    validate,
)

log = logging.getLogger(__name__)

RETRY_BUDGET = 50


class Inapplicable(Exception):
    """No valid site exists for the requested edit. Callers resample."""


class MutationOpKind(enum.Enum):
    INSERT_CONVOLUTION = "insert_convolution"
    INSERT_CONCATENATION = "insert_concatenation"
    INSERT_POOLING = "insert_pooling"
    REMOVE_CONVOLUTION = "remove_convolution"
    REMOVE_CONCATENATION = "remove_concatenation"
    REMOVE_POOLING = "remove_pooling"
    ALTER_NUMBER_OF_CHANNELS = "alter_number_of_channels"
    ALTER_STRIDE = "alter_stride"
    ALTER_FILTER_SIZE = "alter_filter_size"


ALL_OPS = tuple(MutationOpKind)


@dataclass(frozen=True)
class Block:
    node_ids: tuple[int, ...]
    spatial: tuple[int, int]

    def has_conv(self, genome: Genome) -> bool:
        return any(isinstance(genome.kinds[i], Conv) for i in self.node_ids)


@dataclass(frozen=True)
class MutationStep:
    op: MutationOpKind
    site: tuple[int, ...]

    def __str__(self):
        return f"{self.op.value}@{','.join(map(str, self.site))}"


def sample_step_count(m: int, rng: np.random.Generator) -> int:
    """Uniform draw from ``[1, m]``."""
    if m < 1:
        raise ValueError("mutation step-size must be >= 1")
    return int(rng.integers(1, m + 1))


# -- candidate edits ---------------------------------------------------------
# Each generator yields (site, thunk) in a random order; the thunk builds the
# edited genome. The first candidate that validates wins.


def _shuffled(items: list, rng: np.random.Generator) -> list:
    if len(items) <= 1:
        return items
    return [items[i] for i in rng.permutation(len(items))]


def _insert_single(genome: Genome, kind, rng) -> Iterator:
    cls = genome.classifier
    root = genome.input_node
    sites: list[tuple[int, ...]] = [(root,)]
    sites += sorted(e for e in genome.edges if e[1] != cls)
    for site in _shuffled(sites, rng):
        def build(site=site):
            new = genome.next_id
            nodes = genome.nodes + (Node(new, kind),)
            if len(site) == 1:
                edges = genome.edges | {(new, site[0])}
            else:
                u, v = site
                edges = (genome.edges - {site}) | {(u, new), (new, v)}
            return genome.replace(nodes, edges, next_id=new + 1)
        yield site, build


def _descendants(genome: Genome, order: list[int]) -> dict[int, set[int]]:
    succs = genome.succs
    desc: dict[int, set[int]] = {}
    for i in reversed(order):
        s = set(succs[i])
        for j in succs[i]:
            s |= desc[j]
        desc[i] = s
    return desc


def _insert_concat(genome: Genome, rng) -> Iterator:
    order = topological_order(genome)
    shapes = infer_shapes(genome, order)
    desc = _descendants(genome, order)
    kinds, succs = genome.kinds, genome.succs
    cls = genome.classifier
    pool = [i for i in order if not isinstance(kinds[i], (GlobalPool, Classifier))]
    sites = []
    for b in pool:
        for v in succs[b]:
            if v == cls:
                continue
            for a in pool:
                if a == b or a == v or a in desc[v]:
                    continue
                if shapes[a].spatial == shapes[b].spatial:
                    sites.append((a, b, v))
    for site in _shuffled(sites, rng):
        def build(site=site):
            a, b, v = site
            c = genome.next_id
            nodes = genome.nodes + (Node(c, Concat()),)
            edges = (genome.edges - {(b, v)}) | {(b, c), (c, v), (a, c)}
            return genome.replace(nodes, edges, next_id=c + 1)
        yield site, build


def _splice(genome: Genome, x: int) -> Genome:
    """Remove single-input node ``x``, wiring its predecessor to all its successors."""
    preds, succs = genome.preds[x], genome.succs[x]
    edges = {e for e in genome.edges if x not in e}
    for u in preds:
        for s in succs:
            edges.add((u, s))
    nodes = tuple(n for n in genome.nodes if n.id != x)
    return genome.replace(nodes, edges)


def _prune_dead(genome: Genome) -> Genome:
    preds = genome.preds
    alive = {genome.classifier}
    stack = list(alive)
    while stack:
        for p in preds[stack.pop()]:
            if p not in alive:
                alive.add(p)
                stack.append(p)
    if len(alive) == len(genome.nodes):
        return genome
    nodes = tuple(n for n in genome.nodes if n.id in alive)
    edges = {(a, b) for a, b in genome.edges if a in alive and b in alive}
    return genome.replace(nodes, edges)


def _remove_single(genome: Genome, kind: type, rng) -> Iterator:
    for x in _shuffled(genome.ids_of(kind), rng):
        yield (x,), (lambda x=x: _splice(genome, x))


def _remove_concat(genome: Genome, rng) -> Iterator:
    sites = [(c, keep) for c in genome.ids_of(Concat) for keep in genome.preds[c]]
    for site in _shuffled(sites, rng):
        def build(site=site):
            c, keep = site
            edges = {e for e in genome.edges if c not in e}
            edges |= {(keep, s) for s in genome.succs[c]}
            nodes = tuple(n for n in genome.nodes if n.id != c)
            # the dropped input branch may now be dead
            return _prune_dead(genome.replace(nodes, edges))
        yield site, build


def _alter(genome: Genome, field_name: str, choices: tuple[int, ...], rng) -> Iterator:
    sites = []
    for x in genome.ids_of(Conv):
        current = getattr(genome.kinds[x], field_name)
        sites += [(x, v) for v in choices if v != current]
    for site in _shuffled(sites, rng):
        def build(site=site):
            x, v = site
            nodes = tuple(
                Node(n.id, replace(n.kind, **{field_name: v})) if n.id == x else n
                for n in genome.nodes
            )
            return genome.replace(nodes, genome.edges)
        yield site, build


def _candidates(genome: Genome, op: MutationOpKind, rng) -> Iterator:
    K = MutationOpKind
    if op is K.INSERT_CONVOLUTION:
        return _insert_single(genome, Conv(32, 3, 1), rng)
    if op is K.INSERT_POOLING:
        return _insert_single(genome, Pool(), rng)
    if op is K.INSERT_CONCATENATION:
        return _insert_concat(genome, rng)
    if op is K.REMOVE_CONVOLUTION:
        return _remove_single(genome, Conv, rng)
    if op is K.REMOVE_POOLING:
        return _remove_single(genome, Pool, rng)
    if op is K.REMOVE_CONCATENATION:
        return _remove_concat(genome, rng)
    if op is K.ALTER_NUMBER_OF_CHANNELS:
        return _alter(genome, "channels", CHANNEL_CHOICES, rng)
    if op is K.ALTER_STRIDE:
        return _alter(genome, "stride", STRIDE_CHOICES, rng)
    if op is K.ALTER_FILTER_SIZE:
        return _alter(genome, "kernel", KERNEL_CHOICES, rng)
    raise ValueError(f"unknown mutation op {op!r}")


def _needs_validation(op: MutationOpKind) -> bool:
    # Stride-1 conv insertion, concat insertion (pairs already share W, H and
    # acyclicity is prefiltered) and channel/kernel changes cannot break any
    # invariant of a valid genome.
    return op not in (
        MutationOpKind.INSERT_CONVOLUTION,
        MutationOpKind.INSERT_CONCATENATION,
        MutationOpKind.ALTER_NUMBER_OF_CHANNELS,
        MutationOpKind.ALTER_FILTER_SIZE,
    )


def apply_mutation_step(genome: Genome, op: MutationOpKind, rng: np.random.Generator) -> tuple[Genome, MutationStep]:
    """Like :func:`apply_named_mutation` but also reports the chosen site."""
    check = _needs_validation(op)
    for site, build in _candidates(genome, op, rng):
        try:
            child = build()
        except GenomeError:
            continue
        if check and validate(child):
            continue
        return child, MutationStep(op, tuple(site))
    raise Inapplicable(f"{op.value}: no valid site")


def apply_named_mutation(genome: Genome, op: MutationOpKind, rng: np.random.Generator) -> Genome:
    """Apply one named edit at a uniformly random valid site.

    Raises :class:`Inapplicable` when no candidate site yields a valid genome.
    """
    return apply_mutation_step(genome, op, rng)[0]


def mutate_child(
    parent: Genome,
    m: int,
    rng: np.random.Generator,
    trace: list[MutationStep] | None = None,
) -> Genome:
    """Apply ``k ~ U[1, m]`` successful mutation steps to a copy of ``parent``."""
    k = sample_step_count(m, rng)
    child = parent
    for step in range(k):
        for _ in range(RETRY_BUDGET):
            op = ALL_OPS[int(rng.integers(len(ALL_OPS)))]
            try:
                child, done = apply_mutation_step(child, op, rng)
            except Inapplicable:
                continue
            if trace is not None:
                trace.append(done)
            break
        else:
            log.warning("mutation retry budget exhausted after %d of %d steps", step, k)
            return child
    return child


# -- blocks and duplication --------------------------------------------------


def partition_blocks(genome: Genome) -> list[Block]:
    """Maximal runs of equal output (W, H) along topological order, classifier excluded.

    A spatial-reducing node belongs to the block of its output size.
    """
    order = topological_order(genome)
    shapes = infer_shapes(genome, order)
    cls = genome.classifier
    blocks: list[Block] = []
    run: list[int] = []
    spatial = None
    for i in order:
        if i == cls:
            continue
        s = shapes[i].spatial
        if run and s != spatial:
            blocks.append(Block(tuple(run), spatial))
            run = []
        run.append(i)
        spatial = s
    if run:
        blocks.append(Block(tuple(run), spatial))
    return blocks


def duplicate_block(genome: Genome, block_index: int, rng: np.random.Generator | None = None) -> Genome:
    """Insert a fresh copy of block ``block_index`` directly after it.

    External inputs of the copy are fed by the original block's last node; the
    copy's last node takes over the original's outgoing edges.
    """
    blocks = partition_blocks(genome)
    if not 0 <= block_index < len(blocks):
        raise IndexError(f"block index {block_index} out of range (have {len(blocks)})")
    block = blocks[block_index]
    if not block.has_conv(genome):
        raise Inapplicable("block has no convolution to duplicate")
    # the global pooling head is never copied
    body = [i for i in block.node_ids if not isinstance(genome.kinds[i], GlobalPool)]
    members = set(body)
    exit_node = body[-1]

    fresh = genome.next_id
    copy_of = {}
    for i in body:
        copy_of[i] = fresh
        fresh += 1
    nodes = list(genome.nodes) + [Node(copy_of[i], genome.kinds[i]) for i in body]

    edges = {(a, b) for a, b in genome.edges if a != exit_node or b in members}
    for i in body:
        ps = genome.preds[i]
        if not ps:
            edges.add((exit_node, copy_of[i]))
        for p in ps:
            edges.add((copy_of[p] if p in members else exit_node, copy_of[i]))
    for s in genome.succs[exit_node]:
        if s not in members:
            edges.add((copy_of[exit_node], s))

    child = genome.replace(nodes, edges, next_id=fresh)
    problems = validate(child)
    if problems:
        raise Inapplicable(f"duplicated block is invalid: {problems[0]}")
    if count_params(child) <= count_params(genome):
        raise Inapplicable("duplication did not add parameters")
    return child


def duplicable_blocks(genome: Genome) -> list[int]:
    return [i for i, b in enumerate(partition_blocks(genome)) if b.has_conv(genome)]

