"""Two-point hard instances over a triplet ``(X, Y, Z)``.

Columns are ordered ``X, Y, Z`` (indices 0, 1, 2).  The Bernoulli and Gaussian
alternatives follow the chain ``Z -> X -> Y``; the nonparametric alternative
is the collider ``X -> Z <- Y`` with a perturbed-uniform conditional for ``Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ..graphs import Dag
from ..rng import SeedLike, make_rng
from .forest import BERNOULLI, GAUSSIAN, NONPARAM, UnsupportedOperationError, check_family

X, Y, Z = 0, 1, 2
ROLES = ("null", "alt")


def _check_role(role: str) -> bool:
    if role not in ROLES:
        raise ValueError(f"role must be 'null' or 'alt', got {role!r}")
    return role == "alt"


@dataclass(frozen=True)
class BernoulliTriplet:
    c: float
    alt: bool
    family: ClassVar[str] = BERNOULLI

    def __post_init__(self):
        if not 0.0 < self.c <= 0.25:
            raise ValueError(f"Bernoulli signal c must lie in (0, 1/4], got {self.c}")

    @property
    def graph(self) -> Dag:
        return Dag(3, frozenset({(Z, X), (X, Y)}) if self.alt else frozenset())

    def pmf(self) -> np.ndarray:
        """Probability table indexed ``[x, y, z]``."""
        if not self.alt:
            return np.full((2, 2, 2), 0.125)
        c = self.c
        agree, differ = 0.5 + c, 0.5 - c
        table = np.empty((2, 2, 2))
        for x in range(2):
            for y in range(2):
                for z in range(2):
                    px = agree if x == z else differ
                    py = agree if y == x else differ
                    table[x, y, z] = 0.5 * px * py
        return table

    def sample(self, n: int, rng_seed: SeedLike = None) -> np.ndarray:
        rng = make_rng(rng_seed)
        out = np.empty((n, 3), order="F")
        if not self.alt:
            out[:] = rng.random((n, 3)) < 0.5
            return out
        z = rng.random(n) < 0.5
        x = rng.random(n) < np.where(z, 0.5 + self.c, 0.5 - self.c)
        y = rng.random(n) < np.where(x, 0.5 + self.c, 0.5 - self.c)
        out[:, X], out[:, Y], out[:, Z] = x, y, z
        return out


@dataclass(frozen=True)
class GaussianTriplet:
    c: float
    alt: bool
    family: ClassVar[str] = GAUSSIAN

    def __post_init__(self):
        if not 0.0 < self.c <= 0.25:
            raise ValueError(f"Gaussian signal c must lie in (0, 1/4], got {self.c}")

    @property
    def beta(self) -> float:
        return 2.0 * self.c

    @property
    def graph(self) -> Dag:
        return Dag(3, frozenset({(Z, X), (X, Y)}) if self.alt else frozenset())

    def covariance(self) -> np.ndarray:
        if not self.alt:
            return np.eye(3)
        b = self.beta
        sigma = np.eye(3)
        sigma[Z, X] = sigma[X, Z] = b
        sigma[X, Y] = sigma[Y, X] = b
        sigma[Z, Y] = sigma[Y, Z] = b * b
        return sigma

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        sigma = self.covariance()
        prec = np.linalg.inv(sigma)
        _, logdet = np.linalg.slogdet(sigma)
        quad = np.einsum("...i,ij,...j->...", points, prec, points)
        return -0.5 * (quad + logdet + 3 * math.log(2 * math.pi))

    def sample(self, n: int, rng_seed: SeedLike = None) -> np.ndarray:
        rng = make_rng(rng_seed)
        out = np.empty((n, 3), order="F")
        if not self.alt:
            out[:] = rng.standard_normal((n, 3))
            return out
        b = self.beta
        sd = math.sqrt(1.0 - b * b)
        z = rng.standard_normal(n)
        x = b * z + sd * rng.standard_normal(n)
        y = b * x + sd * rng.standard_normal(n)
        out[:, X], out[:, Y], out[:, Z] = x, y, z
        return out


def bump(u: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-energy kernel on [0, 1]."""
    return math.sqrt(2.0) * np.cos(2.0 * np.pi * u)


def _cells(t: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.minimum(np.floor(t * m).astype(int), m - 1)
    return idx, t * m - idx


@dataclass(frozen=True, eq=False)
class NonparamTriplet:
    """Perturbed-uniform collider ``X -> Z <- Y`` on [0, 1]^3.

    ``X, Y ~ U(0, 1)`` and ``p(z | x, y) = 1 + gamma(x, y) * eta(z)`` where

    * ``eta(z) = rho * sum_j nu_j sqrt(m) h(m z - j)`` on ``m`` cells of z,
    * ``gamma(x, y) = rho^2 * sum_ij Delta_ij m' h2(m' x - i, m' y - j)`` on an
      ``m' x m'`` grid, with ``h2(u, v) = sqrt(m') (h(u) + h(v)) + h(u) h(v)``,

    and ``h(u) = sqrt(2) cos(2 pi u)``.  The additive part of ``h2`` is what
    makes ``X`` and ``Y`` marginally dependent on ``Z``.
    """

    c: float
    s: float
    alt: bool
    m: int
    m_prime: int
    rho: float
    delta: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    family: ClassVar[str] = NONPARAM

    @classmethod
    def build(cls, c: float, s: float, alt: bool, rng_seed: SeedLike = None) -> "NonparamTriplet":
        if not 0.0 < c <= 1.0:
            raise ValueError(f"nonparametric signal c must lie in (0, 1], got {c}")
        if not s > 0:
            raise ValueError(f"smoothness s must be positive, got {s}")
        m = math.ceil(1.0 / c - 1e-12)
        m_prime = math.ceil(m ** (1.0 / s) - 1e-9)
        rho = (0.1 * m ** -(1.5 + 1.0 / s)) ** (1.0 / 3.0)
        rng = make_rng(rng_seed)
        delta = rng.choice([-1.0, 1.0], size=(m_prime, m_prime))
        nu = rng.choice([-1.0, 1.0], size=m)
        model = cls(c, s, alt, m, m_prime, rho, delta, nu)
        if alt and model.sup_perturbation() >= 1.0:
            raise ValueError(
                f"density positivity violated: sup|gamma| sup|eta| = {model.sup_perturbation():.3f} >= 1"
            )
        return model

    @property
    def graph(self) -> Dag:
        return Dag(3, frozenset({(X, Z), (Y, Z)}) if self.alt else frozenset())

    def sup_perturbation(self) -> float:
        h_max = math.sqrt(2.0)
        sup_gamma = self.rho**2 * self.m_prime * (2.0 * math.sqrt(self.m_prime) * h_max + h_max**2)
        sup_eta = self.rho * math.sqrt(self.m) * h_max
        return sup_gamma * sup_eta

    def eta(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        j, u = _cells(z, self.m)
        return self.rho * self.nu[j] * math.sqrt(self.m) * bump(u)

    def eta_integral(self, z) -> np.ndarray:
        """``int_0^z eta``; every full cell integrates to zero."""
        z = np.asarray(z, dtype=float)
        j, u = _cells(z, self.m)
        return self.rho * self.nu[j] * math.sqrt(2.0) * np.sin(2 * np.pi * u) / (2 * np.pi * math.sqrt(self.m))

    def gamma(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i, u = _cells(x, self.m_prime)
        j, v = _cells(y, self.m_prime)
        hu, hv = bump(u), bump(v)
        h2 = math.sqrt(self.m_prime) * (hu + hv) + hu * hv
        return self.rho**2 * self.delta[i, j] * self.m_prime * h2

    def density(self, x, y, z) -> np.ndarray:
        x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
        if not self.alt:
            return np.ones(x.shape)
        return 1.0 + self.gamma(x, y) * self.eta(z)

    def density_xz(self, x, z) -> np.ndarray:
        """Closed-form ``p(x, z) = p(x | z)``, integrating ``y`` out cell by cell."""
        if not self.alt:
            return np.ones(np.broadcast(np.asarray(x), np.asarray(z)).shape)
        i, u = _cells(np.asarray(x, dtype=float), self.m_prime)
        row_sums = self.delta.sum(axis=1)
        return 1.0 + self.rho**2 * row_sums[i] * math.sqrt(self.m_prime) * bump(u) * self.eta(z)

    def density_yz(self, y, z) -> np.ndarray:
        if not self.alt:
            return np.ones(np.broadcast(np.asarray(y), np.asarray(z)).shape)
        j, v = _cells(np.asarray(y, dtype=float), self.m_prime)
        col_sums = self.delta.sum(axis=0)
        return 1.0 + self.rho**2 * col_sums[j] * math.sqrt(self.m_prime) * bump(v) * self.eta(z)

    def sample(self, n: int, rng_seed: SeedLike = None) -> np.ndarray:
        rng = make_rng(rng_seed)
        out = np.empty((n, 3), order="F")
        out[:, X] = rng.random(n)
        out[:, Y] = rng.random(n)
        u = rng.random(n)
        if not self.alt:
            out[:, Z] = u
            return out
        g = self.gamma(out[:, X], out[:, Y])
        # Invert the increasing CDF z + g * H(z) by bisection (2^-50 < 1e-10).
        lo, hi = np.zeros(n), np.ones(n)
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            below = mid + g * self.eta_integral(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out[:, Z] = 0.5 * (lo + hi)
        return out


TripletModel = BernoulliTriplet | GaussianTriplet | NonparamTriplet


def hard_instance(
    family: str,
    role: str,
    c: float,
    s: float = 1.0,
    rng_seed: SeedLike = None,
) -> TripletModel:
    """Null (flat product) or alternative hard instance for ``family``."""
    family = check_family(family)
    alt = _check_role(role)
    if family == BERNOULLI:
        return BernoulliTriplet(c, alt)
    if family == GAUSSIAN:
        return GaussianTriplet(c, alt)
    return NonparamTriplet.build(c, s, alt, rng_seed)


def kl_between_instances(family: str, c: float) -> float:
    """Closed-form ``KL(p1 || p0)`` for the parametric hard-instance pairs."""
    family = check_family(family)
    if family == BERNOULLI:
        BernoulliTriplet(c, True)
        return math.log(1 - 4 * c * c) + 2 * c * math.log(1 + 4 * c / (1 - 2 * c))
    if family == GAUSSIAN:
        GaussianTriplet(c, True)
        return -math.log(1 - 4 * c * c)
    raise UnsupportedOperationError("no closed-form KL for the nonparametric pair")


def kl_divergence(p: TripletModel, q: TripletModel, quad_points: int = 12) -> float:
    """Numerical ``KL(p || q)``: cell sum for Bernoulli, Gauss-Hermite for Gaussian."""
    if isinstance(p, BernoulliTriplet) and isinstance(q, BernoulliTriplet):
        a, b = p.pmf().ravel(), q.pmf().ravel()
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))
    if isinstance(p, GaussianTriplet) and isinstance(q, GaussianTriplet):
        nodes, weights = np.polynomial.hermite_e.hermegauss(quad_points)
        weights = weights / math.sqrt(2 * math.pi)
        grid = np.stack(np.meshgrid(nodes, nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 3)
        w = np.einsum("i,j,k->ijk", weights, weights, weights).ravel()
        points = grid @ np.linalg.cholesky(p.covariance()).T
        return float(np.sum(w * (p.logpdf(points) - q.logpdf(points))))
    raise UnsupportedOperationError("numerical KL is only available for Bernoulli and Gaussian pairs")
