"""Data-generating processes and exact oracles."""

from .exact import dependence_oracle, exact_dependence
from .forest import (
    BERNOULLI,
    FAMILIES,
    GAUSSIAN,
    LINKS,
    NONPARAM,
    BernoulliForestModel,
    ForestModel,
    GaussianForestModel,
    NonparamForestModel,
    UnsupportedOperationError,
    covariance_by_paths,
    exact_covariance,
    exact_joint_pmf,
    random_forest_model,
    sample_forest,
)
from .io import DatasetFormatError, read_dataset, read_model, write_dataset, write_model
from .triplets import (
    BernoulliTriplet,
    GaussianTriplet,
    NonparamTriplet,
    TripletModel,
    hard_instance,
    kl_between_instances,
    kl_divergence,
)


def sample_triplet(model: TripletModel, n: int, rng_seed=None):
    """``n`` i.i.d. rows ``(X, Y, Z)`` from a hard instance."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return model.sample(n, rng_seed)
