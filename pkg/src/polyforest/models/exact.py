"""Exact dependence measures computed from a model's true distribution."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .forest import (
    BernoulliForestModel,
    GaussianForestModel,
    NonparamForestModel,
    UnsupportedOperationError,
    bernoulli_tv_dependence,
    exact_covariance,
    exact_joint_pmf,
    gaussian_partial_correlation,
)
from .triplets import BernoulliTriplet, GaussianTriplet, NonparamTriplet

DependenceFn = Callable[[int, int, "int | None"], float]


def _marginal(pmf: np.ndarray, nodes: list[int]) -> np.ndarray:
    others = tuple(a for a in range(pmf.ndim) if a not in nodes)
    table = pmf.sum(axis=others)
    # sum() keeps the remaining axes in ascending order; put them in `nodes` order.
    kept = sorted(nodes)
    return np.transpose(table, [kept.index(v) for v in nodes])


def dependence_oracle(model) -> DependenceFn:
    """Return ``f(j, k, l)`` giving the exact dependence measure of the model.

    The pmf or covariance is computed once and shared across calls.
    """
    if isinstance(model, (NonparamTriplet, NonparamForestModel)):
        raise UnsupportedOperationError(
            "the nonparametric dependence measure is an infimum over all CI densities "
            "and has no exact evaluation"
        )
    if isinstance(model, (BernoulliTriplet, BernoulliForestModel)):
        pmf = model.pmf() if isinstance(model, BernoulliTriplet) else exact_joint_pmf(model)

        def bernoulli(j, k, l=None):
            nodes = [j, k] if l is None else [j, k, l]
            return bernoulli_tv_dependence(_marginal(pmf, nodes))

        return bernoulli
    if isinstance(model, (GaussianTriplet, GaussianForestModel)):
        sigma = model.covariance() if isinstance(model, GaussianTriplet) else exact_covariance(model)

        def gaussian(j, k, l=None):
            return abs(gaussian_partial_correlation(sigma, j, k, l))

        return gaussian
    raise UnsupportedOperationError(f"no exact dependence for {type(model).__name__}")


def exact_dependence(model, j: int, k: int, l: int | None = None) -> float:
    """Exact ``m(X_j; X_k | X_l)``: total-variation form for Bernoulli models,
    absolute partial correlation for Gaussian ones."""
    return dependence_oracle(model)(j, k, l)
