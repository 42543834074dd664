"""Poly-forest structure learning from single-conditioner CI tests.

The skeleton phase keeps ``j - k`` only when the tester rejects independence
under every conditioner in ``{empty} + (nodes other than j, k)``; for removed
pairs the accepting conditioners form the separation set.  The orientation
phase turns each unshielded triple ``j - l - k`` with ``l`` outside
``S(j, k)`` into a collider and then propagates with Meek's rules.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .citests import BoundTester, CiTester
from .graphs import Cpdag, Edge, SeparationSets, Skeleton, meek_closure, pair

EMPTY = None  # separation-set token for the empty conditioning set


class LearnerError(RuntimeError):
    """A tester failure, annotated with the pair and conditioner being tested."""

    def __init__(self, j: int, k: int, conditioner, cause: Exception):
        given = "empty set" if conditioner is None else f"node {conditioner}"
        super().__init__(f"CI test of {j} vs {k} given {given} failed: {cause}")
        self.pair = (j, k)
        self.conditioner = conditioner
        self.__cause__ = cause


@dataclass(frozen=True)
class TraceRow:
    j: int
    k: int
    conditioner: int | None
    statistic: float
    dependent: bool


@dataclass(frozen=True)
class SkeletonResult:
    skeleton: Skeleton
    separation_sets: SeparationSets
    ci_calls: int
    trace: tuple[TraceRow, ...] | None = None


@dataclass(frozen=True)
class LearnResult:
    cpdag: Cpdag
    skeleton: Skeleton
    separation_sets: SeparationSets
    ci_calls: int
    trace: tuple[TraceRow, ...] | None = None
    conflicts: tuple = field(default=())


def _conditioners(d: int, j: int, k: int) -> list[int | None]:
    return [EMPTY] + [l for l in range(d) if l != j and l != k]


def _decide(bound: BoundTester, j: int, k: int, conds):
    try:
        return bound.decide(j, k, conds)
    except Exception as exc:
        # Re-run one at a time to pin down the failing conditioner.
        for l in conds:
            try:
                bound.decide(j, k, [l])
            except Exception as inner:
                raise LearnerError(j, k, l, inner) from inner
        raise LearnerError(j, k, conds[0] if conds else None, exc) from exc


def _scan_pair(bound: BoundTester, d: int, j: int, k: int, full: bool, keep_rows: bool):
    """Test one pair; returns (edge kept, accepting conditioners, calls, trace rows)."""
    conds = _conditioners(d, j, k)
    if full:
        stats, _, dep = _decide(bound, j, k, conds)
        rows = [TraceRow(j, k, l, float(s), bool(x)) for l, s, x in zip(conds, stats, dep)] if keep_rows else []
        accepting = frozenset(l for l, x in zip(conds, dep) if not x)
        return not accepting, accepting, len(conds), rows
    calls = 0
    for l in conds:
        calls += 1
        stats, _, dep = _decide(bound, j, k, [l])
        if not dep[0]:
            return False, frozenset([l]), calls, []
    return True, frozenset(), calls, []


def _bind(tester, data) -> BoundTester:
    return tester if isinstance(tester, BoundTester) else tester.bind(data)


def pc_tree_skeleton(
    data,
    tester: CiTester | BoundTester,
    trace: bool = False,
    workers: int = 1,
    d: int | None = None,
    full_scan: bool | None = None,
) -> SkeletonResult:
    """Skeleton and separation sets from marginal and single-node CI tests.

    With ``trace`` every conditioner is tested for every pair, so there are
    exactly ``C(d,2) (d-1)`` calls and every decision is returned.  Otherwise
    each pair stops at its first accepting conditioner (same edges, fewer
    calls, and separation sets holding only that conditioner).  ``full_scan``
    forces the complete scan without keeping the trace (default: ``trace``).

    Pairs are independent; ``workers > 1`` tests them on a thread pool and the
    results are merged in pair order.  ``d`` is needed only when data is None
    (oracle testers).
    """
    if d is None:
        d = np.asarray(data).shape[1]
    if d < 2:
        raise ValueError("need at least two variables")
    bound = _bind(tester, data)
    pairs = list(combinations(range(d), 2))
    full = trace if full_scan is None else (full_scan or trace)

    def run(p):
        return _scan_pair(bound, d, p[0], p[1], full, trace)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]

    edges, sepsets, calls, rows_all = [], {}, 0, []
    for (j, k), (keep, accepting, n_calls, rows) in zip(pairs, results):
        calls += n_calls
        rows_all.extend(rows)
        if keep:
            edges.append((j, k))
        else:
            sepsets[(j, k)] = accepting
    return SkeletonResult(
        Skeleton(d, frozenset(edges)), sepsets, calls, tuple(rows_all) if trace else None
    )


def unshielded_triples(sk: Skeleton) -> list[tuple[int, int, int]]:
    """All ``(j, l, k)`` with ``j - l - k`` in ``sk``, ``j < k`` and ``j, k`` non-adjacent."""
    nbrs = sk.neighbors()
    out = []
    for l in range(sk.d):
        for j, k in combinations(sorted(nbrs[l]), 2):
            if k not in nbrs[j]:
                out.append((j, l, k))
    return sorted(out)


def colliders(sk: Skeleton, separation_sets: SeparationSets) -> list[tuple[int, int, int]]:
    missing = [(j, k) for j, _, k in unshielded_triples(sk) if (j, k) not in separation_sets]
    if missing:
        raise ValueError(f"no separation set for non-adjacent pair {missing[0]}")
    return [(j, l, k) for j, l, k in unshielded_triples(sk) if l not in separation_sets[(j, k)]]


def orient(
    sk: Skeleton, separation_sets: SeparationSets, strict: bool = True
) -> Cpdag:
    """Orient v-structures, then apply R1-R4 to a fixed point.

    Raises :class:`~polyforest.graphs.OrientationConflict` (carrying both
    rules) when two orientation demands disagree on an edge.
    """
    cpdag, _ = meek_closure(sk, colliders(sk, separation_sets), strict=strict)
    return cpdag


def _complete_separation_sets(bound, sk: Skeleton, sepsets: SeparationSets) -> tuple[SeparationSets, int]:
    """After an early-exit scan, test the middle node of each unshielded triple
    so collider decisions match a full scan."""
    sepsets = dict(sepsets)
    calls = 0
    for j, l, k in unshielded_triples(sk):
        if l in sepsets[(j, k)]:
            continue
        # The scan stops at the first acceptance; conditioners before it rejected.
        first = next(iter(sepsets[(j, k)]))
        order = _conditioners(sk.d, j, k)
        if order.index(l) < order.index(first):
            continue
        calls += 1
        _, _, dep = _decide(bound, j, k, [l])
        if not dep[0]:
            sepsets[(j, k)] = sepsets[(j, k)] | {l}
    return sepsets, calls


def learn(
    data,
    tester: CiTester | BoundTester,
    trace: bool = False,
    strict: bool = False,
    workers: int = 1,
    d: int | None = None,
    full_scan: bool | None = None,
) -> LearnResult:
    """Estimate the CPDAG of a poly-forest from ``data``.

    ``trace=True`` runs the full conditioner scan and keeps every decision;
    the default stops each pair at its first acceptance and then tests the
    middle node of each unshielded triple, which yields the same CPDAG.
    ``full_scan=True`` runs the complete scan without keeping the trace.

    Orientation conflicts can only arise from wrong CI answers.  With
    ``strict=False`` (default) a conflicting edge is left undirected and the
    conflict is recorded in ``LearnResult.conflicts``; with ``strict=True``
    it raises.
    """
    bound = _bind(tester, data)
    full = trace if full_scan is None else (full_scan or trace)
    sk_res = pc_tree_skeleton(data, bound, trace=trace, workers=workers, d=d, full_scan=full)
    sepsets, calls = sk_res.separation_sets, sk_res.ci_calls
    if not full:
        sepsets, extra = _complete_separation_sets(bound, sk_res.skeleton, sepsets)
        calls += extra
    cpdag, conflicts = meek_closure(sk_res.skeleton, colliders(sk_res.skeleton, sepsets), strict=strict)
    return LearnResult(cpdag, sk_res.skeleton, sepsets, calls, sk_res.trace, tuple(conflicts))


def has_directed_cycle(cpdag: Cpdag) -> bool:
    children: dict[int, list[int]] = {v: [] for v in range(cpdag.d)}
    for j, k in cpdag.directed:
        children[j].append(k)
    state = [0] * cpdag.d
    for root in range(cpdag.d):
        if state[root]:
            continue
        stack = [(root, iter(children[root]))]
        state[root] = 1
        while stack:
            v, it = stack[-1]
            w = next(it, None)
            if w is None:
                state[v] = 2
                stack.pop()
            elif state[w] == 1:
                return True
            elif state[w] == 0:
                state[w] = 1
                stack.append((w, iter(children[w])))
    return False


__all__ = [
    "EMPTY",
    "Edge",
    "LearnResult",
    "LearnerError",
    "SkeletonResult",
    "TraceRow",
    "colliders",
    "has_directed_cycle",
    "learn",
    "orient",
    "pair",
    "pc_tree_skeleton",
    "unshielded_triples",
]
