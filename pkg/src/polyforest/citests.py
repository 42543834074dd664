"""Conditional-independence tests.

Three data-driven tests, one per model family:

* Bernoulli: threshold the plug-in total-variation dependence at ``c/2``.
* Gaussian: threshold the absolute sample partial correlation at ``c/2``.
* Nonparametric: discretize, compute a stratified L2 dependence statistic
  and calibrate it by permuting ``y`` within each ``z`` stratum.

Plus exact-oracle testers backed by a model, and the median-trick amplifier.

Each test is available as a plain function on columns (``test_bernoulli``,
``test_gaussian``, ``test_nonparam``) and as a tester object whose
``bind(data)`` precomputes sufficient statistics for the many calls the
structure learner makes on one dataset.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .models import dependence_oracle
from .rng import SeedLike, make_rng

FAMILIES = ("bernoulli", "gaussian", "nonparam", "oracle-bernoulli", "oracle-gaussian")
ORACLE_TOLERANCE = 1e-12


class DegenerateDataError(ValueError):
    def __init__(self, column, message: str):
        super().__init__(f"column {column}: {message}")
        self.column = column


@dataclass(frozen=True)
class CiDecision:
    dependent: bool
    statistic: float
    threshold_or_pvalue: float


@dataclass(frozen=True)
class CiTesterSpec:
    family: str
    c: float | None = None
    cutoff: float = 0.05
    s: float = 1.0
    permutations: int = 199
    folds: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown tester family {self.family!r}; expected one of {FAMILIES}")
        if self.family in ("bernoulli", "gaussian") and not (self.c is not None and self.c > 0):
            raise ValueError(f"{self.family} tester needs a positive signal c")
        if self.folds < 1 or self.folds % 2 == 0:
            raise ValueError(f"folds must be a positive odd integer, got {self.folds}")
        if self.permutations < 1:
            raise ValueError("permutations must be at least 1")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError("cutoff must lie in (0, 1)")


# --------------------------------------------------------------------------
# Bernoulli
# --------------------------------------------------------------------------


def _as_binary(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if not np.isin(v, (0.0, 1.0)).all():
        raise ValueError(f"column {name} is not binary (values must be 0 or 1)")
    return v.astype(np.int64)


def mhat_bernoulli(x, y, z=None, weights=None) -> float:
    """Plug-in ``sum_z p(z) sum_{x,y} |p(x,y|z) - p(x|z) p(y|z)|``.

    ``weights`` turns the rows into a weighted sample (e.g. the cells of an
    exact pmf); by default every row has weight one.
    """
    x = _as_binary(x, "x")
    y = _as_binary(y, "y")
    z = np.zeros_like(x) if z is None else _as_binary(z, "z")
    if len(x) == 0:
        raise ValueError("need at least one sample")
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    counts = np.bincount(4 * z + 2 * x + y, weights=w, minlength=8).reshape(2, 2, 2)  # [z, x, y]
    return _tv_from_counts(counts, w.sum())


def _tv_from_counts(counts: np.ndarray, n: float) -> float:
    # counts[..., z, x, y]; sum_z p(z) sum |n_xyz/n_z - n_xz n_yz / n_z^2| = sum |n_xyz - n_xz n_yz / n_z| / n
    nz = counts.sum(axis=(-2, -1), keepdims=True)
    nxz = counts.sum(axis=-1, keepdims=True)
    nyz = counts.sum(axis=-2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = np.where(nz > 0, nxz * nyz / np.where(nz > 0, nz, 1.0), 0.0)
    return np.abs(counts - expected).sum(axis=(-3, -2, -1)) / n


def test_bernoulli(x, y, z=None, c: float = 0.1) -> CiDecision:
    """Declare dependence iff the plug-in TV dependence reaches ``c/2``."""
    if not c > 0:
        raise ValueError("c must be positive")
    stat = mhat_bernoulli(x, y, z)
    return CiDecision(bool(stat >= c / 2), float(stat), c / 2)


# --------------------------------------------------------------------------
# Gaussian
# --------------------------------------------------------------------------


def partial_correlation(x, y, z=None) -> float:
    """Sample partial correlation of ``x`` and ``y`` given ``z`` (plain
    correlation without ``z``) from the 1/n centered sample covariance."""
    cols = [np.asarray(v, dtype=float).ravel() for v in ((x, y) if z is None else (x, y, z))]
    n = len(cols[0])
    if n < 3:
        raise ValueError("need at least 3 samples")
    data = np.column_stack(cols)
    data = data - data.mean(axis=0)
    S = data.T @ data / n
    names = ("x", "y", "z")
    for i, v in enumerate(np.diag(S)):
        if not v > 0:
            raise DegenerateDataError(names[i], "zero sample variance")
    if z is None:
        sxy, sxx, syy = S[0, 1], S[0, 0], S[1, 1]
    else:
        sxy = S[0, 1] - S[0, 2] * S[2, 1] / S[2, 2]
        sxx = S[0, 0] - S[0, 2] ** 2 / S[2, 2]
        syy = S[1, 1] - S[1, 2] ** 2 / S[2, 2]
        for name, v, full in (("x", sxx, S[0, 0]), ("y", syy, S[1, 1])):
            if v <= 1e-12 * full:
                raise DegenerateDataError(name, "zero residual variance given z")
    return float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0))


def test_gaussian(x, y, z=None, c: float = 0.1) -> CiDecision:
    """Declare dependence iff the absolute partial correlation reaches ``c/2``."""
    if not c > 0:
        raise ValueError("c must be positive")
    stat = abs(partial_correlation(x, y, z))
    return CiDecision(bool(stat >= c / 2), stat, c / 2)


# --------------------------------------------------------------------------
# Nonparametric
# --------------------------------------------------------------------------


def discretize(column, bins: int) -> np.ndarray:
    """Equal-width labels ``floor(v * bins)`` with 1.0 put in the last bin."""
    if bins < 1:
        raise ValueError("bins must be positive")
    v = np.asarray(column, dtype=float)
    if v.size and (np.nanmin(v) < 0.0 or np.nanmax(v) > 1.0 or np.isnan(v).any()):
        raise ValueError("values must lie in [0, 1]")
    return np.minimum(np.floor(v * bins).astype(np.int64), bins - 1)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def np_bin_counts(n: int, s: float) -> tuple[int, int]:
    """Bins for ``(X, Y)``: ``n^(2/(5s+2))``; for ``Z``: ``n^(2s/(5s+2))``."""
    if n < 1 or not s > 0:
        raise ValueError("need n >= 1 and s > 0")
    bins_xy = max(2, _round_half_up(n ** (2.0 / (5.0 * s + 2.0))))
    bins_z = max(1, _round_half_up(n ** (2.0 * s / (5.0 * s + 2.0))))
    return bins_xy, bins_z


def stratified_permutations(strata: np.ndarray, rounds: int, rng: np.random.Generator) -> np.ndarray:
    """``rounds`` index arrays, each a uniform permutation within every stratum.

    Row ``r`` satisfies ``strata[out[r]] == strata``.
    """
    n = len(strata)
    target = np.argsort(strata, kind="stable")
    keys = strata[None, :] + rng.random((rounds, n))
    source = np.argsort(keys, axis=1)
    out = np.empty((rounds, n), dtype=np.int32)
    out[:, target] = source
    return out


def _l2_statistics(a, b_rows, zl, bins_xy, bins_z, n_total) -> np.ndarray:
    """Stratified L2 statistic for each row of ``b_rows`` (shape ``(R, n)``)."""
    R, n = b_rows.shape
    cells = bins_z * bins_xy * bins_xy
    codes = (zl * bins_xy + a) * bins_xy
    flat = (codes[None, :] + b_rows) + (np.arange(R) * cells)[:, None]
    N = np.bincount(flat.ravel(), minlength=R * cells).reshape(R, bins_z, bins_xy, bins_xy).astype(float)
    nz = N[0].sum(axis=(1, 2))
    naz = N[0].sum(axis=2)
    nbz = N[0].sum(axis=1)
    keep = nz >= 2
    nz_safe = np.where(keep, nz, 1.0)
    prod = naz[:, :, None] * nbz[:, None, :] / (nz_safe**2)[:, None, None]
    dev = N / nz_safe[None, :, None, None] - prod[None]
    per_stratum = (dev**2).sum(axis=(2, 3))
    return (per_stratum[:, keep] * (nz[keep] / n_total)[None, :]).sum(axis=1)


def _permutation_test(a, b, zl, bins_xy, bins_z, perms, cutoff) -> CiDecision:
    rows = np.vstack([b[None, :], b[perms]])
    stats = _l2_statistics(a, rows, zl, bins_xy, bins_z, len(a))
    observed = stats[0]
    exceed = int(np.count_nonzero(stats[1:] >= observed * (1.0 - 1e-12)))
    pvalue = (1 + exceed) / (len(perms) + 1)
    return CiDecision(bool(pvalue <= cutoff), float(observed), pvalue)


MIN_NONPARAM_SAMPLES = 20


def test_nonparam(
    x,
    y,
    z=None,
    s: float = 1.0,
    permutations: int = 199,
    cutoff: float = 0.05,
    seed: SeedLike = 0,
) -> CiDecision:
    """Discretize-and-permute CI test for data on [0, 1].

    The statistic is ``sum_z (n_z/n) sum_{a,b} (p(a,b|z) - p(a|z) p(b|z))^2``
    over strata with at least two samples; its p-value is
    ``(1 + #{T* >= T}) / (B + 1)`` over ``B`` within-stratum shuffles of ``y``.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = len(x)
    if n < MIN_NONPARAM_SAMPLES:
        raise ValueError(f"nonparametric test needs at least {MIN_NONPARAM_SAMPLES} samples, got {n}")
    bins_xy, bins_z = np_bin_counts(n, s)
    a = discretize(x, bins_xy)
    b = discretize(y, bins_xy)
    if z is None:
        zl, bins_z = np.zeros(n, dtype=np.int64), 1
    else:
        zl = discretize(z, bins_z)
    perms = stratified_permutations(zl, permutations, make_rng(seed))
    return _permutation_test(a, b, zl, bins_xy, bins_z, perms, cutoff)


# --------------------------------------------------------------------------
# Median trick
# --------------------------------------------------------------------------


def median_trick(base_test: Callable[[np.ndarray], CiDecision], K: int, data) -> CiDecision:
    """Majority vote of ``base_test`` over ``K`` contiguous equal folds.

    Trailing ``n mod K`` rows are dropped.  The statistic is the number of
    folds voting "dependent"; the threshold is ``K/2``.
    """
    data = np.asarray(data)
    n = len(data)
    if K < 1 or K % 2 == 0:
        raise ValueError(f"K must be a positive odd integer, got {K}")
    if K > n:
        raise ValueError(f"K={K} exceeds the sample size {n}")
    if K == 1:
        return base_test(data)
    size = n // K
    votes = sum(base_test(data[i * size:(i + 1) * size]).dependent for i in range(K))
    return CiDecision(votes > K / 2, float(votes), K / 2)


# --------------------------------------------------------------------------
# Tester objects used by the learner
# --------------------------------------------------------------------------

Conditioner = int | None


class BoundTester:
    """A tester with its dataset attached.

    ``decide(j, k, conds)`` returns three arrays aligned with ``conds``:
    statistics, thresholds (or p-values) and dependent flags.
    """

    def decide(self, j: int, k: int, conds: Sequence[Conditioner]):
        raise NotImplementedError

    def test(self, j: int, k: int, l: Conditioner = None) -> CiDecision:
        stat, thr, dep = self.decide(j, k, [l])
        return CiDecision(bool(dep[0]), float(stat[0]), float(thr[0]))


class CiTester:
    def __init__(self, spec: CiTesterSpec):
        self.spec = spec

    def bind(self, data) -> BoundTester:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec})"


def _stack(results: list[CiDecision]):
    return (
        np.array([r.statistic for r in results]),
        np.array([r.threshold_or_pvalue for r in results]),
        np.array([r.dependent for r in results], dtype=bool),
    )


class _BoundGaussian(BoundTester):
    def __init__(self, data, c: float):
        data = np.asarray(data, dtype=float)
        n = data.shape[0]
        if n < 3:
            raise ValueError("need at least 3 samples")
        centered = data - data.mean(axis=0)
        cov = centered.T @ centered / n
        var = np.diag(cov)
        bad = np.flatnonzero(~(var > 0))
        if bad.size:
            raise DegenerateDataError(int(bad[0]), "zero sample variance")
        sd = np.sqrt(var)
        self.corr = np.clip(cov / np.outer(sd, sd), -1.0, 1.0)
        self.threshold = c / 2

    def decide(self, j, k, conds):
        R = self.corr
        stats = np.empty(len(conds))
        idx = [i for i, l in enumerate(conds) if l is not None]
        for i, l in enumerate(conds):
            if l is None:
                stats[i] = abs(R[j, k])
        if idx:
            ls = np.array([conds[i] for i in idx])
            rjl, rkl = R[j, ls], R[k, ls]
            res_j, res_k = 1.0 - rjl**2, 1.0 - rkl**2
            for res, node in ((res_j, j), (res_k, k)):
                bad = np.flatnonzero(res <= 1e-12)
                if bad.size:
                    raise DegenerateDataError(node, f"zero residual variance given column {int(ls[bad[0]])}")
            stats[idx] = np.minimum(np.abs(R[j, k] - rjl * rkl) / np.sqrt(res_j * res_k), 1.0)
        return stats, np.full(len(conds), self.threshold), stats >= self.threshold


class GaussianTester(CiTester):
    def bind(self, data):
        return _BoundGaussian(data, self.spec.c)


class _BoundBernoulli(BoundTester):
    def __init__(self, data, c: float):
        data = np.asarray(data, dtype=float)
        bad = np.flatnonzero(~np.isin(data, (0.0, 1.0)).all(axis=0))
        if bad.size:
            raise ValueError(f"column {int(bad[0])} is not binary (values must be 0 or 1)")
        self.X = np.ascontiguousarray(data)
        self.n = data.shape[0]
        self.s1 = self.X.sum(axis=0)
        self.s2 = self.X.T @ self.X
        self._third: dict[int, np.ndarray] = {}
        self.threshold = c / 2

    def _third_moments(self, j: int) -> np.ndarray:
        # T[k, l] = #{rows with x_j = x_k = x_l = 1}
        if j not in self._third:
            self._third[j] = (self.X * self.X[:, [j]]).T @ self.X
        return self._third[j]

    def decide(self, j, k, conds):
        n, s1, s2 = self.n, self.s1, self.s2
        counts = np.empty((len(conds), 2, 2, 2))  # [cond, z, x, y]
        has_z = np.array([l is not None for l in conds])
        ls = np.array([l if l is not None else 0 for l in conds])
        t = self._third_moments(j)[k, ls]
        sjk, sjl, skl = s2[j, k], s2[j, ls], s2[k, ls]
        sj, sk, sl = s1[j], s1[k], s1[ls]
        counts[:, 1, 1, 1] = t
        counts[:, 1, 1, 0] = sjl - t
        counts[:, 1, 0, 1] = skl - t
        counts[:, 0, 1, 1] = sjk - t
        counts[:, 1, 0, 0] = sl - sjl - skl + t
        counts[:, 0, 1, 0] = sj - sjk - sjl + t
        counts[:, 0, 0, 1] = sk - sjk - skl + t
        counts[:, 0, 0, 0] = n - sj - sk - sl + sjk + sjl + skl - t
        # Marginal tests collapse the z axis into a single stratum.
        margin = counts[~has_z].sum(axis=1)
        counts[~has_z, 0] = margin
        counts[~has_z, 1] = 0.0
        stats = _tv_from_counts(counts, n)
        return stats, np.full(len(conds), self.threshold), stats >= self.threshold


class BernoulliTester(CiTester):
    def bind(self, data):
        return _BoundBernoulli(data, self.spec.c)


class _BoundNonparam(BoundTester):
    def __init__(self, data, spec: CiTesterSpec):
        data = np.asarray(data, dtype=float)
        self.n = data.shape[0]
        if self.n < MIN_NONPARAM_SAMPLES:
            raise ValueError(f"nonparametric test needs at least {MIN_NONPARAM_SAMPLES} samples, got {self.n}")
        self.spec = spec
        self.bins_xy, self.bins_z = np_bin_counts(self.n, spec.s)
        self.A = discretize(data, self.bins_xy)
        self.Z = discretize(data, self.bins_z)
        self._perms: dict[Conditioner, np.ndarray] = {}

    def permutations(self, l: Conditioner) -> np.ndarray:
        # One set of shuffles per conditioner, keyed by (seed, l) for reproducibility.
        if l not in self._perms:
            strata = np.zeros(self.n, dtype=np.int64) if l is None else self.Z[:, l]
            key = (self.spec.seed, 0 if l is None else l + 1)
            self._perms[l] = stratified_permutations(strata, self.spec.permutations, make_rng(key))
        return self._perms[l]

    def decide(self, j, k, conds):
        out = []
        for l in conds:
            if l is None:
                zl, bins_z = np.zeros(self.n, dtype=np.int64), 1
            else:
                zl, bins_z = self.Z[:, l], self.bins_z
            out.append(_permutation_test(
                self.A[:, j], self.A[:, k], zl, self.bins_xy, bins_z, self.permutations(l), self.spec.cutoff
            ))
        return _stack(out)


class NonparamTester(CiTester):
    def bind(self, data):
        return _BoundNonparam(data, self.spec)


class _BoundOracle(BoundTester):
    def __init__(self, measure):
        self.measure = measure

    def decide(self, j, k, conds):
        stats = np.array([self.measure(j, k, l) for l in conds])
        return stats, np.full(len(conds), ORACLE_TOLERANCE), stats > ORACLE_TOLERANCE


class OracleTester(CiTester):
    """Ground-truth tester: dependent iff the model's exact dependence exceeds 1e-12."""

    def __init__(self, model, spec: CiTesterSpec | None = None):
        family = f"oracle-{model.family}"
        super().__init__(spec or CiTesterSpec(family))
        self.model = model
        self._measure = dependence_oracle(model)

    def bind(self, data=None):
        return _BoundOracle(self._measure)


def oracle_test(model, j: int, k: int, l: Conditioner = None) -> CiDecision:
    return OracleTester(model).bind().test(j, k, l)


class _BoundMedian(BoundTester):
    def __init__(self, base: CiTester, data, K: int):
        data = np.asarray(data)
        n = len(data)
        if K > n:
            raise ValueError(f"K={K} exceeds the sample size {n}")
        size = n // K
        self.K = K
        self.folds = [base.bind(data[i * size:(i + 1) * size]) for i in range(K)]

    def decide(self, j, k, conds):
        votes = sum(f.decide(j, k, conds)[2].astype(int) for f in self.folds)
        return votes.astype(float), np.full(len(conds), self.K / 2), votes > self.K / 2


class MedianTester(CiTester):
    def __init__(self, base: CiTester, K: int):
        if K < 1 or K % 2 == 0:
            raise ValueError(f"K must be a positive odd integer, got {K}")
        super().__init__(base.spec)
        self.base = base
        self.K = K

    def bind(self, data):
        if self.K == 1:
            return self.base.bind(data)
        return _BoundMedian(self.base, data, self.K)


def make_tester(spec: CiTesterSpec, model=None) -> CiTester:
    """Build the tester described by ``spec``; oracle families need ``model``."""
    if spec.family.startswith("oracle"):
        if model is None:
            raise ValueError("oracle testers need the true model")
        if model.family != spec.family.split("-", 1)[1]:
            raise ValueError(f"{spec.family} tester cannot use a {model.family} model")
        return OracleTester(model, spec)
    base = {"bernoulli": BernoulliTester, "gaussian": GaussianTester, "nonparam": NonparamTester}[spec.family](spec)
    return MedianTester(base, spec.folds) if spec.folds > 1 else base


def run_test(spec: CiTesterSpec, data) -> CiDecision:
    """Test column 0 against column 1, given column 2 when present."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] not in (2, 3):
        raise ValueError("expected 2 or 3 columns")
    l = 2 if data.shape[1] == 3 else None
    return make_tester(spec).bind(data).test(0, 1, l)
