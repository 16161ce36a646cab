"""Directed communication graph and the generic consensus protocols.

Edges are stored in information-flow direction: an edge ``(src, dst, w)``
means node ``dst`` receives data from node ``src`` with weight ``w``, so the
adjacency entry ``A[dst, src] = w``. Node ids are 1-based.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    weight: float = 1.0


@dataclass(frozen=True)
class CommGraph:
    n: int
    edges: tuple[Edge, ...] = ()
    leaders: frozenset[int] = frozenset()
    link_delay: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "leaders", frozenset(self.leaders))
        object.__setattr__(self, "link_delay", dict(self.link_delay))
        seen = set()
        for e in self.edges:
            for node in (e.src, e.dst):
                if not 1 <= node <= self.n:
                    raise ValueError(f"edge {e.src}->{e.dst} references unknown node {node}")
            if e.src == e.dst:
                raise ValueError(f"self-edge on node {e.src}")
            if not math.isfinite(e.weight) or e.weight < 0:
                raise ValueError(f"edge {e.src}->{e.dst} has invalid weight {e.weight}")
            if (e.src, e.dst) in seen:
                raise ValueError(f"duplicate edge {e.src}->{e.dst}")
            seen.add((e.src, e.dst))
        bad = [i for i in self.leaders if not 1 <= i <= self.n]
        if bad:
            raise ValueError(f"leaders {sorted(bad)} not in 1..{self.n}")
        for link, d in self.link_delay.items():
            if not (math.isfinite(d) and d >= 0):
                raise ValueError(f"link {link} has invalid delay {d}")

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]], leaders: Iterable[int] = (),
                   bidirectional: bool = False, weight: float = 1.0) -> "CommGraph":
        """Build a graph from ``(src, dst)`` pairs with a common weight."""
        edges = {}
        for s, d in pairs:
            edges[(s, d)] = Edge(s, d, weight)
            if bidirectional:
                edges[(d, s)] = Edge(d, s, weight)
        return cls(n, tuple(edges.values()), frozenset(leaders))

    def delay(self, src: int, dst: int) -> float:
        return self.link_delay.get((src, dst), 0.0)

    def in_neighbors(self, i: int) -> list[tuple[int, float]]:
        """``(j, a_ij)`` for every node j that sends to i."""
        return [(e.src, e.weight) for e in self.edges if e.dst == i and e.weight > 0]

    def out_neighbors(self, i: int) -> list[int]:
        return [e.dst for e in self.edges if e.src == i and e.weight > 0]


def adjacency(g: CommGraph) -> np.ndarray:
    A = np.zeros((g.n, g.n))
    for e in g.edges:
        A[e.dst - 1, e.src - 1] = e.weight
    return A


def laplacian(g: CommGraph) -> np.ndarray:
    A = adjacency(g)
    return np.diag(A.sum(axis=1)) - A


def pinning_vector(g: CommGraph) -> np.ndarray:
    b = np.zeros(g.n)
    for i in g.leaders:
        b[i - 1] = 1.0
    return b


def reachable_from(g: CommGraph, root: int) -> set[int]:
    succ: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for e in g.edges:
        if e.weight > 0:
            succ[e.src].append(e.dst)
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def spanning_tree_roots(g: CommGraph) -> list[int]:
    """Nodes from which every node is reachable along information flow."""
    return [r for r in range(1, g.n + 1) if len(reachable_from(g, r)) == g.n]


def has_spanning_tree(g: CommGraph) -> bool:
    return bool(spanning_tree_roots(g))


def consensus_input(g: CommGraph, i: int, x: Sequence[float], v: Optional[float] = None) -> float:
    """Leader-follower consensus input for node ``i``.

    ``sum_j a_ij (x_j - x_i) + b_i (v - x_i)``; the pinning term is dropped
    when ``v`` is None or ``i`` is not a leader.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (g.n,):
        raise ValueError(f"state vector must have {g.n} entries, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("consensus state contains non-finite values")
    xi = x[i - 1]
    u = sum(a * (x[j - 1] - xi) for j, a in g.in_neighbors(i))
    if v is not None and i in g.leaders:
        if not math.isfinite(v):
            raise ValueError("external reference is not finite")
        u += v - xi
    return float(u)


def consensus_rhs(g: CommGraph, x: np.ndarray, v: Optional[float] = None) -> np.ndarray:
    """Vectorised form, ``-L x + B (v - x)``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("consensus state contains non-finite values")
    u = -laplacian(g) @ x
    if v is not None:
        u += pinning_vector(g) * (v - x)
    return u
