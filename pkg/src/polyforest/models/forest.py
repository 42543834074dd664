"""Structural-equation simulators over a poly-forest and their exact oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ..graphs import Dag, Edge, GraphError, is_polyforest, pair
from ..rng import SeedLike, make_rng

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"
NONPARAM = "nonparam"
FAMILIES = (BERNOULLI, GAUSSIAN, NONPARAM)

MAX_ENUMERATION_D = 22

LINKS = {
    "sin": lambda z: 0.5 * (np.sin(2 * np.pi * z) + 1.0),
    "square": lambda z: z**2,
    "log": lambda z: np.log1p(z) / math.log(2.0),
    "cos": lambda z: 0.5 * (np.cos(2 * np.pi * z) + 1.0),
}
LINK_NAMES = tuple(LINKS)


class UnsupportedOperationError(TypeError):
    """The requested exact computation is not available for this family."""


def check_family(family: str) -> str:
    family = family.lower()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return family


@dataclass(frozen=True, eq=False)
class BernoulliForestModel:
    """Binary SEM.  Roots are Bern(1/2); a child has
    ``P(X_k = 1 | pa) = 1/2 + mean_e R_e b_e (2 x_e - 1)`` over its parent edges,
    which for a single parent is ``Bern(1/2 + R b)`` / ``Bern(1/2 - R b)``."""

    graph: Dag
    flip_magnitudes: dict[Edge, float]
    signs: dict[Edge, int]
    family: ClassVar[str] = BERNOULLI

    def __post_init__(self):
        if set(self.flip_magnitudes) != set(self.graph.edges) or set(self.signs) != set(self.graph.edges):
            raise ValueError("need one flip magnitude and one sign per edge")
        for e, b in self.flip_magnitudes.items():
            if not 0.0 < b < 0.5:
                raise ValueError(f"flip magnitude on {e} must lie in (0, 1/2), got {b}")
        for e, r in self.signs.items():
            if r not in (-1, 1):
                raise ValueError(f"sign on {e} must be -1 or +1, got {r}")


@dataclass(frozen=True, eq=False)
class GaussianForestModel:
    """Linear SEM ``X_k = sum_e beta_e X_parent + N(0, sigma_k^2)``."""

    graph: Dag
    coefficients: dict[Edge, float]
    noise_variances: tuple[float, ...]
    family: ClassVar[str] = GAUSSIAN

    def __post_init__(self):
        if set(self.coefficients) != set(self.graph.edges):
            raise ValueError("need one coefficient per edge")
        if len(self.noise_variances) != self.graph.d:
            raise ValueError("need one noise variance per node")
        if any(not v > 0 for v in self.noise_variances):
            raise ValueError("noise variances must be positive")


@dataclass(frozen=True, eq=False)
class NonparamForestModel:
    """``X_k = mix_weight * mean_e f_e(X_parent) + (1 - mix_weight) * U_k``; roots are U(0,1)."""

    graph: Dag
    links: dict[Edge, str]
    mix_weight: float = 0.3
    family: ClassVar[str] = NONPARAM

    def __post_init__(self):
        if set(self.links) != set(self.graph.edges):
            raise ValueError("need one link function per edge")
        unknown = set(self.links.values()) - set(LINKS)
        if unknown:
            raise ValueError(f"unknown link functions {sorted(unknown)}")
        if not 0.0 < self.mix_weight < 1.0:
            raise ValueError("mix_weight must lie in (0, 1)")


ForestModel = BernoulliForestModel | GaussianForestModel | NonparamForestModel


def random_forest_model(
    family: str,
    graph: Dag,
    rng_seed: SeedLike = None,
    signal: float | None = None,
) -> ForestModel:
    """Draw random SEM parameters for ``graph``.

    Default ranges: Gaussian ``|beta| ~ U[0.1, 0.5]`` with random sign and unit
    noise; Bernoulli ``b ~ U(0.3, 0.48)``, ``R ~ U{-1, +1}``; nonparametric links
    uniform over :data:`LINKS`.

    ``signal=c`` instead builds a forest version of the two-point hard
    instances: Gaussian edges get ``|beta| = 2c`` with noise variances making
    every node unit-variance, Bernoulli edges get ``b = c``.  The weakest
    edge dependence then scales with ``c``.
    """
    family = check_family(family)
    if not is_polyforest(graph):
        raise GraphError("random_forest_model requires a poly-forest")
    rng = make_rng(rng_seed)
    edges = sorted(graph.edges)
    if family == GAUSSIAN:
        signs = rng.choice([-1.0, 1.0], size=len(edges))
        if signal is None:
            mags = rng.uniform(0.1, 0.5, size=len(edges))
            noise = (1.0,) * graph.d
        else:
            if not 0.0 < signal <= 0.25:
                raise ValueError("Gaussian signal must lie in (0, 1/4]")
            mags = np.full(len(edges), 2.0 * signal)
            indeg = [len(graph.parents(k)) for k in range(graph.d)]
            noise = tuple(1.0 - m * (2.0 * signal) ** 2 for m in indeg)
            if min(noise) <= 0:
                raise ValueError("signal too large for the in-degree of this graph")
        coef = {e: float(s * m) for e, s, m in zip(edges, signs, mags)}
        return GaussianForestModel(graph, coef, tuple(float(v) for v in noise))
    if family == BERNOULLI:
        if signal is None:
            mags = rng.uniform(0.3, 0.48, size=len(edges))
        else:
            if not 0.0 < signal < 0.5:
                raise ValueError("Bernoulli signal must lie in (0, 1/2)")
            mags = np.full(len(edges), float(signal))
        signs = rng.choice([-1, 1], size=len(edges))
        return BernoulliForestModel(
            graph,
            {e: float(b) for e, b in zip(edges, mags)},
            {e: int(r) for e, r in zip(edges, signs)},
        )
    picks = rng.integers(len(LINK_NAMES), size=len(edges))
    return NonparamForestModel(graph, {e: LINK_NAMES[i] for e, i in zip(edges, picks)})


def sample_forest(model: ForestModel, n: int, rng_seed: SeedLike = None) -> np.ndarray:
    """Draw ``n`` i.i.d. rows, generating nodes in topological order.

    Returns an ``(n, d)`` float64 array in column-major layout.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(rng_seed)
    g = model.graph
    out = np.empty((n, g.d), order="F")
    for k in g.topological_order():
        pa = g.parents(k)
        if isinstance(model, BernoulliForestModel):
            p1 = np.full(n, 0.5)
            for p in pa:
                e = (p, k)
                p1 += model.signs[e] * model.flip_magnitudes[e] * (2.0 * out[:, p] - 1.0) / len(pa)
            out[:, k] = (rng.random(n) < p1).astype(float)
        elif isinstance(model, GaussianForestModel):
            col = rng.normal(0.0, math.sqrt(model.noise_variances[k]), size=n)
            for p in pa:
                col += model.coefficients[(p, k)] * out[:, p]
            out[:, k] = col
        else:
            noise = rng.random(n)
            if pa:
                signal = sum(LINKS[model.links[(p, k)]](out[:, p]) for p in pa) / len(pa)
                out[:, k] = model.mix_weight * signal + (1.0 - model.mix_weight) * noise
            else:
                out[:, k] = noise
    return out


def exact_joint_pmf(model: BernoulliForestModel) -> np.ndarray:
    """Joint pmf as an array of shape ``(2,) * d``; axis ``k`` indexes ``X_k``."""
    if not isinstance(model, BernoulliForestModel):
        raise UnsupportedOperationError("exact_joint_pmf needs a Bernoulli model")
    d = model.graph.d
    if d > MAX_ENUMERATION_D:
        raise ValueError(f"d={d} is too large to enumerate (limit {MAX_ENUMERATION_D})")

    def axis_vector(values, axis):
        shape = [1] * d
        shape[axis] = 2
        return np.asarray(values, dtype=float).reshape(shape)

    table = np.ones((2,) * d)
    for k in range(d):
        pa = model.graph.parents(k)
        p1 = np.full((1,) * d, 0.5)
        for p in pa:
            e = (p, k)
            p1 = p1 + model.signs[e] * model.flip_magnitudes[e] * axis_vector([-1.0, 1.0], p) / len(pa)
        xk = axis_vector([0.0, 1.0], k)
        table = table * (xk * p1 + (1.0 - xk) * (1.0 - p1))
    return table


def exact_covariance(model: GaussianForestModel) -> np.ndarray:
    """``Sigma = (I - B^T)^{-1} Omega (I - B)^{-1}`` with ``B[parent, child] = beta``."""
    if not isinstance(model, GaussianForestModel):
        raise UnsupportedOperationError("exact_covariance needs a Gaussian model")
    d = model.graph.d
    B = np.zeros((d, d))
    for (p, c), beta in model.coefficients.items():
        B[p, c] = beta
    inv = np.linalg.inv(np.eye(d) - B.T)
    sigma = inv @ np.diag(model.noise_variances) @ inv.T
    return (sigma + sigma.T) / 2.0


def covariance_by_paths(model: GaussianForestModel) -> np.ndarray:
    """Covariance of a Gaussian poly-forest from path products.

    Two nodes covary iff the unique skeleton path between them has no
    collider; the covariance is then the variance of the path's source node
    times the product of the coefficients along the path.
    """
    g = model.graph
    if not is_polyforest(g):
        raise GraphError("path products only apply to poly-forests")
    var = np.zeros(g.d)
    for k in g.topological_order():
        # Parents of a poly-forest node are marginally independent.
        var[k] = model.noise_variances[k] + sum(
            model.coefficients[(p, k)] ** 2 * var[p] for p in g.parents(k)
        )
    adj: dict[int, list[int]] = {v: [] for v in range(g.d)}
    for j, k in g.edges:
        adj[j].append(k)
        adj[k].append(j)

    sigma = np.diag(var)
    for src in range(g.d):
        # DFS from src, carrying the path from src to the current node.
        stack = [(src, [src])]
        while stack:
            v, path = stack.pop()
            if v != src and v > src:
                value = _path_covariance(model, path, var)
                sigma[src, v] = sigma[v, src] = value
            for w in adj[v]:
                if len(path) < 2 or w != path[-2]:
                    stack.append((w, path + [w]))
    return sigma


def _path_covariance(model: GaussianForestModel, path: list[int], var: np.ndarray) -> float:
    edges = model.graph.edges
    forward = [(a, b) in edges for a, b in zip(path, path[1:])]
    # A collider is a node entered forward and left backward.
    for into, out in zip(forward, forward[1:]):
        if into and not out:
            return 0.0
    # Without colliders the path is  <- <- ... <- source -> ... ->
    top = path[forward.index(True)] if True in forward else path[-1]
    prod = 1.0
    for (a, b), fw in zip(zip(path, path[1:]), forward):
        prod *= model.coefficients[(a, b) if fw else (b, a)]
    return float(var[top] * prod)


def bernoulli_tv_dependence(table: np.ndarray) -> float:
    """``sum_z p(z) sum_{x,y} |p(x,y|z) - p(x|z) p(y|z)|`` for a ``(2,2)`` or ``(2,2,2)`` table."""
    if table.ndim == 2:
        table = table[:, :, None]
    total = 0.0
    for z in range(table.shape[2]):
        pz = table[:, :, z].sum()
        if pz <= 0:
            continue
        cond = table[:, :, z] / pz
        px = cond.sum(axis=1)
        py = cond.sum(axis=0)
        total += pz * np.abs(cond - np.outer(px, py)).sum()
    return float(total)


def gaussian_partial_correlation(sigma: np.ndarray, j: int, k: int, l: int | None = None) -> float:
    """Signed partial correlation of ``j, k`` given ``l`` from a covariance matrix."""
    if l is None:
        return float(sigma[j, k] / math.sqrt(sigma[j, j] * sigma[k, k]))
    cov = sigma[j, k] - sigma[j, l] * sigma[l, k] / sigma[l, l]
    vj = sigma[j, j] - sigma[j, l] ** 2 / sigma[l, l]
    vk = sigma[k, k] - sigma[k, l] ** 2 / sigma[l, l]
    return float(cov / math.sqrt(vj * vk))
