"""Structural Hamming distances and precise-recovery rate."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

from .graphs import Cpdag, Dag, Skeleton, as_cpdag, pair


@dataclass(frozen=True)
class EvalReport:
    shd_skeleton: int
    shd_cpdag: int
    exact_skeleton: bool
    exact_cpdag: bool

    def line(self) -> str:
        return (
            f"shd_skel={self.shd_skeleton} shd_cpdag={self.shd_cpdag} "
            f"exact_skel={int(self.exact_skeleton)} exact_cpdag={int(self.exact_cpdag)}"
        )


def _check_d(a, b) -> None:
    if a.d != b.d:
        raise ValueError(f"graphs have different node counts ({a.d} vs {b.d})")


def _as_skeleton(g) -> Skeleton:
    if isinstance(g, Skeleton):
        return g
    return as_cpdag(g).skeleton


def shd_skeleton(a: Skeleton | Cpdag | Dag, b: Skeleton | Cpdag | Dag) -> int:
    """Number of unordered pairs adjacent in exactly one graph."""
    _check_d(a, b)
    return len(_as_skeleton(a).edges ^ _as_skeleton(b).edges)


def _marks(g: Cpdag) -> dict:
    marks = {pair(j, k): (j, k) for j, k in g.directed}
    marks.update({e: "--" for e in g.undirected})
    return marks


def shd_cpdag(a: Cpdag | Dag, b: Cpdag | Dag) -> int:
    """Pairs present in one graph only, or present in both with different marks.

    Every discrepancy costs 1, including a reversed arrow.
    """
    _check_d(a, b)
    ma, mb = _marks(as_cpdag(a)), _marks(as_cpdag(b))
    return sum(1 for e in ma.keys() | mb.keys() if ma.get(e) != mb.get(e))


def evaluate(true: Cpdag | Dag, est: Cpdag | Dag) -> EvalReport:
    """Compare an estimate with the truth; a true DAG is compared via its arrows as given."""
    s, c = shd_skeleton(true, est), shd_cpdag(true, est)
    return EvalReport(s, c, s == 0, c == 0)


def prr(flags: Iterable[bool]) -> float:
    """Fraction of replications that recovered the target exactly."""
    flags = [bool(f) for f in flags]
    if not flags:
        raise ValueError("prr of an empty list")
    return sum(flags) / len(flags)
