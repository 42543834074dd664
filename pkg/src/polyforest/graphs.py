"""Graph types and structural operations on poly-forests.

Nodes are the integers ``0..d-1``.  Directed edges are ``(parent, child)``
tuples; undirected edges are stored canonically as ``(low, high)`` tuples.
"""

from __future__ import annotations

import re
from collections import defaultdict, deque
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from .rng import SeedLike, make_rng

Edge = tuple[int, int]


def pair(j: int, k: int) -> Edge:
    return (j, k) if j < k else (k, j)


class GraphError(ValueError):
    """Invalid graph construction or an operation outside its supported domain."""


class GraphParseError(GraphError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _check_nodes(d: int, edges: Iterable[Edge]) -> None:
    if d < 1:
        raise GraphError(f"node count must be positive, got {d}")
    for j, k in edges:
        if not (0 <= j < d and 0 <= k < d):
            raise GraphError(f"edge ({j}, {k}) has a node outside [0, {d})")
        if j == k:
            raise GraphError(f"self-loop on node {j}")


@dataclass(frozen=True)
class Dag:
    d: int
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(j), int(k)) for j, k in self.edges)
        object.__setattr__(self, "edges", edges)
        _check_nodes(self.d, edges)
        if len({pair(j, k) for j, k in edges}) != len(edges):
            raise GraphError("an edge appears in both orientations")
        if len(self.topological_order()) != self.d:
            raise GraphError("graph contains a directed cycle")

    def parents(self, k: int) -> list[int]:
        return sorted(j for j, c in self.edges if c == k)

    def children(self, j: int) -> list[int]:
        return sorted(c for p, c in self.edges if p == j)

    def topological_order(self) -> list[int]:
        indeg = [0] * self.d
        out = defaultdict(list)
        for j, k in self.edges:
            indeg[k] += 1
            out[j].append(k)
        queue = deque(v for v in range(self.d) if indeg[v] == 0)
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for c in sorted(out[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        return order


@dataclass(frozen=True)
class Skeleton:
    d: int
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        _check_nodes(self.d, self.edges)
        object.__setattr__(self, "edges", frozenset(pair(int(j), int(k)) for j, k in self.edges))

    def neighbors(self) -> dict[int, set[int]]:
        adj = {v: set() for v in range(self.d)}
        for j, k in self.edges:
            adj[j].add(k)
            adj[k].add(j)
        return adj

    def adjacent(self, j: int, k: int) -> bool:
        return pair(j, k) in self.edges


@dataclass(frozen=True)
class Cpdag:
    d: int
    directed: frozenset[Edge] = field(default_factory=frozenset)
    undirected: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        directed = frozenset((int(j), int(k)) for j, k in self.directed)
        undirected = frozenset(pair(int(j), int(k)) for j, k in self.undirected)
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)
        _check_nodes(self.d, directed | undirected)
        as_pairs = {pair(j, k) for j, k in directed}
        if len(as_pairs) != len(directed):
            raise GraphError("a pair appears in both orientations")
        if as_pairs & undirected:
            raise GraphError("a pair is both directed and undirected")

    @property
    def skeleton(self) -> Skeleton:
        return Skeleton(self.d, frozenset(pair(j, k) for j, k in self.directed) | self.undirected)

    @classmethod
    def undirected_from(cls, sk: Skeleton) -> "Cpdag":
        return cls(sk.d, frozenset(), sk.edges)


# Separation sets map an unordered pair to the conditioners that accepted
# independence; ``None`` stands for the empty conditioning set.
SeparationSets = dict[Edge, frozenset]


def skeleton(g: Dag) -> Skeleton:
    return Skeleton(g.d, frozenset(pair(j, k) for j, k in g.edges))


def is_polyforest(g: Dag) -> bool:
    # A forest on d nodes with e edges is acyclic iff union-find never merges
    # two nodes already in one component.
    parent = list(range(g.d))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for j, k in skeleton(g).edges:
        rj, rk = find(j), find(k)
        if rj == rk:
            return False
        parent[rj] = rk
    return True


def v_structures(g: Dag) -> list[tuple[int, int, int]]:
    """Unshielded colliders ``j -> l <- k`` as ``(j, l, k)`` with ``j < k``."""
    sk = skeleton(g)
    out = []
    for l in range(g.d):
        pa = g.parents(l)
        for a in range(len(pa)):
            for b in range(a + 1, len(pa)):
                j, k = pa[a], pa[b]
                if not sk.adjacent(j, k):
                    out.append((j, l, k))
    return sorted(out)


def random_polyforest(d: int, attach_prob: float = 0.8, rng_seed: SeedLike = None) -> Dag:
    """Random directed forest: shuffle the nodes, then attach each non-first
    node to a uniformly chosen predecessor with probability ``attach_prob``."""
    if not 0.0 <= attach_prob <= 1.0:
        raise ValueError(f"attach_prob must lie in [0, 1], got {attach_prob}")
    rng = make_rng(rng_seed)
    order = rng.permutation(d)
    edges = set()
    for i in range(1, d):
        if rng.random() < attach_prob:
            edges.add((int(order[rng.integers(i)]), int(order[i])))
    return Dag(d, frozenset(edges))


def random_orientation(sk: Skeleton, rng_seed: SeedLike = None) -> Dag:
    """Orient every edge of a forest skeleton independently at random.

    Any orientation of a forest is acyclic, so the result is a poly-forest which,
    unlike :func:`random_polyforest`, generally contains v-structures.
    """
    rng = make_rng(rng_seed)
    edges = sorted(sk.edges)
    flips = rng.random(len(edges)) < 0.5
    g = Dag(sk.d, frozenset((k, j) if f else (j, k) for (j, k), f in zip(edges, flips)))
    if not is_polyforest(g):
        raise GraphError("skeleton is not a forest")
    return g


class OrientationConflict(GraphError):
    def __init__(self, edge: Edge, first: str, second: str):
        super().__init__(f"conflicting orientation of edge {edge[0]}-{edge[1]}: {first} vs {second}")
        self.edge = edge
        self.rules = (first, second)


class _Pdag:
    """Mutable partially directed graph used while orienting edges."""

    def __init__(self, sk: Skeleton, strict: bool):
        self.d = sk.d
        self.adj = sk.neighbors()
        self.arrows: dict[Edge, str] = {}  # (tail, head) -> rule that placed it
        self.frozen: set[Edge] = set()
        self.conflicts: list[tuple[Edge, str, str]] = []
        self.strict = strict

    def directed(self, j: int, k: int) -> bool:
        return (j, k) in self.arrows

    def undirected(self, j: int, k: int) -> bool:
        return (
            k in self.adj[j]
            and (j, k) not in self.arrows
            and (k, j) not in self.arrows
        )

    def _reaches(self, src: int, dst: int) -> bool:
        seen, stack = {src}, [src]
        while stack:
            v = stack.pop()
            if v == dst:
                return True
            for w in self.adj[v]:
                if (v, w) in self.arrows and w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def _conflict(self, edge: Edge, first: str, second: str) -> None:
        if self.strict:
            raise OrientationConflict(edge, first, second)
        self.conflicts.append((edge, first, second))

    def orient(self, j: int, k: int, rule: str) -> bool:
        """Place ``j -> k``; returns True if the graph changed."""
        e = pair(j, k)
        if (j, k) in self.arrows:
            return False
        if e in self.frozen:
            return False
        if (k, j) in self.arrows:
            self._conflict(e, f"{self.arrows[(k, j)]} {k}->{j}", f"{rule} {j}->{k}")
            del self.arrows[(k, j)]
            self.frozen.add(e)
            return True
        if self._reaches(k, j):
            self._conflict(e, f"directed path {k}~>{j}", f"{rule} {j}->{k}")
            self.frozen.add(e)
            return True
        self.arrows[(j, k)] = rule
        return True

    def to_cpdag(self) -> Cpdag:
        directed = frozenset(self.arrows)
        undirected = frozenset(
            pair(j, k) for j in range(self.d) for k in self.adj[j] if j < k and self.undirected(j, k)
        )
        return Cpdag(self.d, directed, undirected)


def _rule1(g: _Pdag) -> bool:
    changed = False
    for (j, k) in sorted(g.arrows):
        for l in sorted(g.adj[k]):
            if l != j and g.undirected(k, l) and l not in g.adj[j]:
                changed |= g.orient(k, l, "R1")
    return changed


def _rule2(g: _Pdag) -> bool:
    changed = False
    for j in range(g.d):
        for k in sorted(g.adj[j]):
            if not g.undirected(j, k):
                continue
            if any(g.directed(j, l) and g.directed(l, k) for l in g.adj[j] & g.adj[k]):
                changed |= g.orient(j, k, "R2")
    return changed


def _rule3(g: _Pdag) -> bool:
    changed = False
    for j in range(g.d):
        for k in sorted(g.adj[j]):
            if not g.undirected(j, k):
                continue
            mids = sorted(
                l for l in g.adj[j] & g.adj[k] if g.undirected(j, l) and g.directed(l, k)
            )
            if any(i not in g.adj[l] for a, l in enumerate(mids) for i in mids[a + 1:]):
                changed |= g.orient(j, k, "R3")
    return changed


def _rule4(g: _Pdag) -> bool:
    # j - k becomes j -> k when j - l -> i -> k with l, k non-adjacent and j adjacent to i.
    changed = False
    for j in range(g.d):
        for k in sorted(g.adj[j]):
            if not g.undirected(j, k):
                continue
            for i in sorted(g.adj[j] & g.adj[k]):
                if not g.directed(i, k):
                    continue
                if any(
                    g.undirected(j, l) and g.directed(l, i) and k not in g.adj[l]
                    for l in g.adj[j] & g.adj[i]
                    if l != k
                ):
                    changed |= g.orient(j, k, "R4")
                    break
    return changed


def meek_closure(
    sk: Skeleton,
    colliders: Iterable[tuple[int, int, int]],
    strict: bool = True,
) -> tuple[Cpdag, list[tuple[Edge, str, str]]]:
    """Orient the given colliders, then apply R1-R4 until nothing changes.

    Returns the resulting CPDAG and the list of conflicts that were resolved by
    leaving the edge undirected (always empty when ``strict``).
    """
    g = _Pdag(sk, strict)
    for j, l, k in sorted(colliders):
        g.orient(j, l, f"v-structure({j},{l},{k})")
        g.orient(k, l, f"v-structure({j},{l},{k})")
    while True:
        changed = _rule1(g)
        changed |= _rule2(g)
        changed |= _rule3(g)
        changed |= _rule4(g)
        if not changed:
            break
    return g.to_cpdag(), g.conflicts


def true_cpdag(g: Dag) -> Cpdag:
    """CPDAG of the Markov equivalence class of a poly-forest."""
    if not is_polyforest(g):
        raise GraphError("true_cpdag is only defined for poly-forests")
    cpdag, _ = meek_closure(skeleton(g), v_structures(g), strict=True)
    return cpdag


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------

_HEADER = re.compile(r"^d\s*=\s*(\d+)$")
_EDGE = re.compile(r"^(\d+)\s*(->|--)\s*(\d+)$")


def parse_graph(text: str) -> Dag | Cpdag:
    """Parse the ``d=<int>`` / ``j -> k`` / ``j -- k`` format.

    Statements are separated by newlines or ``;``.  A file with only ``->``
    lines yields a :class:`Dag`; any ``--`` line yields a :class:`Cpdag`.
    """
    d = None
    directed: list[tuple[int, int, int]] = []
    undirected: list[tuple[int, int, int]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        for stmt in raw.split("#", 1)[0].split(";"):
            stmt = stmt.strip()
            if not stmt:
                continue
            if d is None:
                m = _HEADER.match(stmt)
                if not m:
                    raise GraphParseError(line_no, f"expected 'd=<int>', got {stmt!r}")
                d = int(m.group(1))
                if d < 1:
                    raise GraphParseError(line_no, "node count must be positive")
                continue
            m = _EDGE.match(stmt)
            if not m:
                raise GraphParseError(line_no, f"malformed edge {stmt!r}")
            j, op, k = int(m.group(1)), m.group(2), int(m.group(3))
            if j >= d or k >= d:
                raise GraphParseError(line_no, f"node index out of range [0, {d})")
            if j == k:
                raise GraphParseError(line_no, f"self-loop on node {j}")
            (directed if op == "->" else undirected).append((line_no, j, k))
    if d is None:
        raise GraphParseError(0, "missing 'd=<int>' header")

    seen: set[Edge] = set()
    for line_no, j, k in directed + undirected:
        if pair(j, k) in seen:
            raise GraphParseError(line_no, f"duplicate edge between {j} and {k}")
        seen.add(pair(j, k))

    try:
        if undirected:
            return Cpdag(d, frozenset((j, k) for _, j, k in directed),
                         frozenset((j, k) for _, j, k in undirected))
        return Dag(d, frozenset((j, k) for _, j, k in directed))
    except GraphError as exc:
        raise GraphParseError(directed[-1][0] if directed else 1, str(exc)) from exc


def write_graph(g: Dag | Cpdag | Skeleton) -> str:
    lines = [f"d={g.d}"]
    if isinstance(g, Dag):
        lines += [f"{j} -> {k}" for j, k in sorted(g.edges)]
    elif isinstance(g, Cpdag):
        lines += [f"{j} -> {k}" for j, k in sorted(g.directed)]
        lines += [f"{j} -- {k}" for j, k in sorted(g.undirected)]
    else:
        lines += [f"{j} -- {k}" for j, k in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def read_graph(path: str | Path) -> Dag | Cpdag:
    return parse_graph(Path(path).read_text())


def save_graph(g: Dag | Cpdag | Skeleton, path: str | Path) -> None:
    Path(path).write_text(write_graph(g))


def as_cpdag(g: Dag | Cpdag | Skeleton) -> Cpdag:
    """View any graph as a CPDAG: a DAG keeps its arrows, a skeleton is all undirected."""
    if isinstance(g, Cpdag):
        return g
    if isinstance(g, Skeleton):
        return Cpdag.undirected_from(g)
    return Cpdag(g.d, g.edges, frozenset())
