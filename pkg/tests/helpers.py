"""Genome builders and independent oracles shared by the tests."""

from __future__ import annotations

from fractions import Fraction
from math import comb

import mpmath
import networkx as nx
import numpy as np

from eigen_nas.genome import Classifier, Concat, Conv, Genome, GlobalPool, Node, Pool, TensorShape

mpmath.mp.dps = 50


def chain(kinds, input_shape=(3, 32, 32), num_classes=10) -> Genome:
    """input -> kinds... -> GlobalPool -> Classifier, ids in order."""
    kinds = list(kinds) + [GlobalPool(), Classifier(num_classes)]
    nodes = [Node(i, k) for i, k in enumerate(kinds)]
    edges = {(i, i + 1) for i in range(len(kinds) - 1)}
    return Genome(nodes, edges, TensorShape(*input_shape), num_classes)


def graph(kinds: dict, edges, input_shape=(3, 32, 32), num_classes=10) -> Genome:
    return Genome([Node(i, k) for i, k in kinds.items()], set(edges), TensorShape(*input_shape), num_classes)


def to_nx(genome: Genome) -> nx.DiGraph:
    g = nx.DiGraph()
    for n in genome.nodes:
        g.add_node(n.id, kind=n.kind)
    g.add_edges_from(genome.edges)
    return g


def isomorphic(a: Genome, b: Genome) -> bool:
    return (a.input_shape == b.input_shape and a.num_classes == b.num_classes
            and nx.is_isomorphic(to_nx(a), to_nx(b), node_match=lambda x, y: x["kind"] == y["kind"]))


# -- parameter counting, written out per layer without touching the package --

def oracle_param_count(genome: Genome) -> int:
    depth = {}
    order = list(nx.lexicographical_topological_sort(to_nx(genome)))
    total = 0
    for i in order:
        kind = genome.kinds[i]
        preds = sorted(a for a, b in genome.edges if b == i)
        din = genome.input_shape.depth if not preds else depth[preds[0]]
        if isinstance(kind, Conv):
            total += kind.kernel * kind.kernel * din * kind.channels + kind.channels + 2 * kind.channels
            depth[i] = kind.channels
        elif isinstance(kind, Concat):
            depth[i] = sum(depth[p] for p in preds)
        elif isinstance(kind, Classifier):
            total += din * kind.num_classes + kind.num_classes
            depth[i] = kind.num_classes
        else:
            depth[i] = din
    return total


# -- order statistics --------------------------------------------------------

def brute_kth_largest(scores, k):
    """k-th largest by repeated removal of the current maximum."""
    pool = list(scores)
    if k > len(pool):
        return min(pool)
    for _ in range(k - 1):
        pool.remove(max(pool))
    return max(pool)


# -- high precision losses ---------------------------------------------------

def mp_softmax(v, T=1):
    v = [mpmath.mpf(x) / mpmath.mpf(T) for x in v]
    m = max(v)
    e = [mpmath.e ** (x - m) for x in v]
    z = sum(e)
    return [x / z for x in e]


def mp_cross_entropy(y, p, floor="1e-12"):
    """Cross-entropy with the contract's probability floor applied before the log."""
    floor = mpmath.mpf(floor)
    return -sum(mpmath.mpf(a) * mpmath.log(max(b, floor)) for a, b in zip(y, p))


def mp_distillation(y, s, t, alpha, T):
    alpha, T = mpmath.mpf(alpha), mpmath.mpf(T)
    return ((1 - alpha) * mp_cross_entropy(y, mp_softmax(s))
            + alpha * T * T * mp_cross_entropy(mp_softmax(s, T), mp_softmax(t, T)))


# -- finite differences ------------------------------------------------------

def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of x (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


# -- ceil-mode pooling by explicit window enumeration --------------------------

def pool_by_windows(grid: np.ndarray, k: int = 2, s: int = 2) -> np.ndarray:
    """Max over every window origin that still covers at least one real pixel."""
    rows = [r for r in range(0, grid.shape[0], s)]
    cols = [c for c in range(0, grid.shape[1], s)]
    return np.array([[grid[r:r + k, c:c + k].max() for c in cols] for r in rows])


# -- one-sided sign test -----------------------------------------------------

def sign_test_p(wins: int, losses: int) -> float:
    """P(X >= wins) for X ~ Bin(wins + losses, 1/2), exact."""
    n = wins + losses
    if n == 0:
        return 1.0
    return float(Fraction(sum(comb(n, i) for i in range(wins, n + 1)), 2 ** n))


# -- hand simulation of the two-gate culling on scripted scores ----------------

def simulate_extinction(scripts: dict, v1: float, v2: float, p: int, q: int, params: dict | None = None):
    """scripts: id -> (f1, f2, f3). Returns (after_T1, after_T2, best, v1, v2)."""
    params = params or {}

    def gate(ids, col, v, k):
        scores = [scripts[i][col] for i in ids]
        v = max(brute_kth_largest(scores, k), v)
        keep = [i for i in ids if scripts[i][col] >= v]
        if not keep:
            keep = [min(ids, key=lambda i: (-scripts[i][col], params.get(i, 0), i))]
        return keep, v

    ids = sorted(scripts)
    s1, v1 = gate(ids, 0, v1, p)
    s2, v2 = gate(s1, 1, v2, q)
    best = min(s2, key=lambda i: (-scripts[i][2], params.get(i, 0), i))
    return s1, s2, best, v1, v2
