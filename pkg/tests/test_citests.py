from __future__ import annotations

import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyforest.citests import (
    CiDecision,
    CiTesterSpec,
    DegenerateDataError,
    MedianTester,
    OracleTester,
    discretize,
    make_tester,
    median_trick,
    mhat_bernoulli,
    np_bin_counts,
    oracle_test,
    partial_correlation,
    run_test,
    stratified_permutations,
    test_bernoulli as bernoulli_test,
    test_gaussian as gaussian_test,
    test_nonparam as nonparam_test,
)
from polyforest.graphs import Dag, random_orientation, random_polyforest, skeleton
from polyforest.models import (
    BernoulliForestModel,
    GaussianForestModel,
    exact_dependence,
    exact_joint_pmf,
    hard_instance,
    random_forest_model,
    sample_triplet,
)
from polyforest.rng import make_rng

X, Y, Z = 0, 1, 2


def rejection_rate(make_data, test, seeds):
    return np.mean([test(make_data(s)).dependent for s in range(seeds)])


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            CiTesterSpec("gaussian")
        with pytest.raises(ValueError):
            CiTesterSpec("gaussian", c=0.1, folds=4)
        with pytest.raises(ValueError):
            CiTesterSpec("nonparam", permutations=0)
        with pytest.raises(ValueError):
            CiTesterSpec("poisson", c=0.1)
        CiTesterSpec("nonparam")  # no signal needed


class TestMhatBernoulli:
    def test_balanced_table_is_zero(self):
        assert mhat_bernoulli([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0

    def test_perfect_correlation(self):
        assert mhat_bernoulli([0, 1], [0, 1]) == pytest.approx(1.0)

    def test_alt_sample_converges(self):
        data = sample_triplet(hard_instance("bernoulli", "alt", 0.2), 100_000, rng_seed=1)
        assert abs(mhat_bernoulli(data[:, X], data[:, Z]) - 0.4) <= 0.01

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            mhat_bernoulli([0, 2], [0, 1])

    def test_empty_stratum_contributes_zero(self):
        # z is constant, so the conditional statistic equals the marginal one.
        x, y = [0, 1, 1, 0, 1], [0, 1, 0, 0, 1]
        assert mhat_bernoulli(x, y, [1] * 5) == pytest.approx(mhat_bernoulli(x, y))

    def test_exact_pmf_plug_in_equals_exact_dependence(self):
        cells = np.array(list(product((0, 1), repeat=3)), dtype=float)
        for c in (0.05, 0.1, 0.25):
            m = hard_instance("bernoulli", "alt", c)
            w = m.pmf()[tuple(cells.T.astype(int))]
            for j, k, l in [(X, Y, Z), (X, Z, None), (Y, Z, X), (X, Y, None)]:
                got = mhat_bernoulli(cells[:, j], cells[:, k], None if l is None else cells[:, l], weights=w)
                assert got == pytest.approx(exact_dependence(m, j, k, l), abs=1e-12)

    def test_exact_pmf_plug_in_on_forest(self):
        g = random_orientation(skeleton(random_polyforest(5, 1.0, rng_seed=2)), rng_seed=3)
        m = random_forest_model("bernoulli", g, rng_seed=4)
        cells = np.array(list(product((0, 1), repeat=5)), dtype=float)
        w = exact_joint_pmf(m).ravel()
        for j, k, l in [(0, 1, 2), (1, 3, None), (2, 4, 0), (0, 4, 3)]:
            got = mhat_bernoulli(cells[:, j], cells[:, k], None if l is None else cells[:, l], weights=w)
            assert got == pytest.approx(exact_dependence(m, j, k, l), abs=1e-12)


class TestBernoulliTest:
    def test_balanced_independent(self):
        assert not bernoulli_test([0, 0, 1, 1], [0, 1, 0, 1], c=0.2).dependent

    def test_correlated_dependent(self):
        dec = bernoulli_test([0, 1], [0, 1], c=0.2)
        assert dec == CiDecision(True, 1.0, 0.1)

    def test_closed_threshold(self):
        # a statistic exactly at the threshold c/2 counts as dependent
        x, y = [0, 0, 1, 1], [0, 1, 1, 1]
        stat = mhat_bernoulli(x, y)
        assert bernoulli_test(x, y, c=2 * stat).dependent

    def test_null_level(self):
        model = hard_instance("bernoulli", "null", 0.2)
        rate = rejection_rate(
            lambda s: sample_triplet(model, 10_000, rng_seed=(3, s)),
            lambda d: bernoulli_test(d[:, X], d[:, Y], d[:, Z], c=0.2),
            200,
        )
        assert 1 - rate >= 0.95


class TestPartialCorrelation:
    def test_identical_columns(self):
        x = np.random.default_rng(0).standard_normal(50)
        assert partial_correlation(x, x) == pytest.approx(1.0)

    def test_independent_gaussians(self):
        data = sample_triplet(hard_instance("gaussian", "null", 0.1), 100_000, rng_seed=2)
        for j, k, l in [(0, 1, None), (0, 1, 2), (0, 2, 1), (1, 2, 0), (0, 2, None)]:
            assert abs(partial_correlation(data[:, j], data[:, k], None if l is None else data[:, l])) <= 0.02

    def test_alt_converges(self):
        data = sample_triplet(hard_instance("gaussian", "alt", 0.1), 200_000, rng_seed=3)
        assert abs(partial_correlation(data[:, X], data[:, Y], data[:, Z]) - 0.2 / math.sqrt(1.04)) <= 0.01

    def test_matches_regression_residuals(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal(500)
        x = z + rng.standard_normal(500)
        y = -2 * z + 0.5 * x + rng.standard_normal(500)
        rx = x - np.polyval(np.polyfit(z, x, 1), z)
        ry = y - np.polyval(np.polyfit(z, y, 1), z)
        assert partial_correlation(x, y, z) == pytest.approx(np.corrcoef(rx, ry)[0, 1], abs=1e-10)

    def test_degenerate_column_named(self):
        x = np.arange(10.0)
        with pytest.raises(DegenerateDataError) as info:
            partial_correlation(x, np.ones(10))
        assert info.value.column == "y"
        with pytest.raises(DegenerateDataError) as info:
            partial_correlation(2 * x, np.sin(x), x)
        assert info.value.column == "x"

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            partial_correlation([1.0, 2.0], [2.0, 1.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariance(self, seed, a, b, w):
        data = sample_triplet(hard_instance("gaussian", "alt", 0.2), 300, rng_seed=seed)
        base = gaussian_test(data[:, X], data[:, Y], data[:, Z], c=0.2)
        scaled = gaussian_test(a * data[:, X], b * data[:, Y], w * data[:, Z], c=0.2)
        assert base.dependent == scaled.dependent
        assert base.statistic == pytest.approx(scaled.statistic, abs=1e-9)


class TestGaussianTest:
    def test_identical_columns_dependent(self):
        x = np.random.default_rng(1).standard_normal(30)
        assert gaussian_test(x, x, c=2.0).dependent

    def test_null_level(self):
        model = hard_instance("gaussian", "null", 0.2)
        rate = rejection_rate(
            lambda s: sample_triplet(model, 10_000, rng_seed=(4, s)),
            lambda d: gaussian_test(d[:, X], d[:, Y], d[:, Z], c=0.2),
            200,
        )
        assert 1 - rate >= 0.95

    def test_alt_power(self):
        model = hard_instance("gaussian", "alt", 0.2)
        rate = rejection_rate(
            lambda s: sample_triplet(model, 10_000, rng_seed=(5, s)),
            lambda d: gaussian_test(d[:, X], d[:, Y], d[:, Z], c=0.2),
            200,
        )
        assert rate >= 0.95


class TestDiscretize:
    def test_single_bin(self):
        assert np.all(discretize(np.linspace(0, 1, 11), 1) == 0)

    def test_half_open(self):
        assert discretize([0.5], 2)[0] == 1

    def test_one_goes_to_last_bin(self):
        assert discretize([1.0], 4)[0] == 3

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            discretize([1.2], 3)
        with pytest.raises(ValueError):
            discretize([-0.1], 3)


class TestBinCounts:
    def test_n1000_s1(self):
        assert np_bin_counts(1000, 1.0) == (7, 7)

    def test_floor_guards(self):
        assert np_bin_counts(1, 2.5) == (2, 1)

    def test_monotone_in_s(self):
        xy = [np_bin_counts(10_000, s)[0] for s in (0.5, 1, 2, 4, 50)]
        z = [np_bin_counts(10_000, s)[1] for s in (0.5, 1, 2, 4, 50)]
        assert xy == sorted(xy, reverse=True) and z == sorted(z)
        assert np_bin_counts(10_000, 1e6) == (2, round(10_000 ** 0.4))


class TestNonparamTest:
    def test_null_level_marginal(self):
        rate = rejection_rate(
            lambda s: make_rng((20, s)).random((1000, 2)),
            lambda d: nonparam_test(d[:, 0], d[:, 1], seed=s_seed(d)),
            500,
        )
        assert rate <= 0.08

    def test_identity_dependent(self):
        rate = rejection_rate(
            lambda s: make_rng((21, s)).random(500),
            lambda x: nonparam_test(x, x, seed=1),
            100,
        )
        assert rate >= 0.99

    def test_pvalue_range_and_determinism(self):
        d = make_rng(3).random((300, 3))
        a = nonparam_test(d[:, 0], d[:, 1], d[:, 2], permutations=49, seed=7)
        b = nonparam_test(d[:, 0], d[:, 1], d[:, 2], permutations=49, seed=7)
        assert a == b
        assert 1 / 50 <= a.threshold_or_pvalue <= 1

    def test_super_uniform_pvalues(self):
        pvals = []
        for s in range(1000):
            d = make_rng((22, s)).random((200, 3))
            pvals.append(nonparam_test(d[:, 0], d[:, 1], d[:, 2], seed=(23, s)).threshold_or_pvalue)
        pvals = np.array(pvals)
        for alpha in (0.01, 0.05, 0.1):
            assert np.mean(pvals <= alpha) <= alpha + 3 * math.sqrt(alpha / 1000)

    def test_small_n_and_range_errors(self):
        with pytest.raises(ValueError):
            nonparam_test(np.full(10, 0.5), np.full(10, 0.5))
        with pytest.raises(ValueError):
            nonparam_test(np.linspace(0, 2, 50), np.linspace(0, 1, 50))

    @pytest.mark.slow
    def test_power_grows_with_n(self):
        model = hard_instance("nonparam", "alt", 0.3, s=1.0, rng_seed=1)

        def rate(n):
            return rejection_rate(
                lambda s: sample_triplet(model, n, rng_seed=(24, n, s)),
                lambda d: nonparam_test(d[:, X], d[:, Y], d[:, Z], seed=s_seed(d)),
                200,
            )

        assert rate(5000) > rate(500)


def s_seed(data) -> int:
    """A permutation seed tied to the dataset, so repeated calls agree."""
    return int(np.asarray(data).ravel()[0] * 2**31)


def test_stratified_permutations_stay_in_strata():
    strata = make_rng(1).integers(0, 5, 200)
    perms = stratified_permutations(strata, 20, make_rng(2))
    for p in perms:
        assert sorted(p) == list(range(200))
        np.testing.assert_array_equal(strata[p], strata)


class TestMedianTrick:
    def test_k1_is_base(self):
        for s in range(500):
            d = make_rng((30, s)).standard_normal((40, 3))

            def base(x):
                return gaussian_test(x[:, 0], x[:, 1], x[:, 2], c=0.3)

            assert median_trick(base, 1, d) == base(d)

    def test_coin_flip_vote(self):
        rng = make_rng(31)

        def coin(_):
            return CiDecision(bool(rng.random() >= 0.3), 0.0, 0.0)  # wrong w.p. 0.3 if truth is dependent

        trials = 20_000
        errors = sum(not median_trick(coin, 3, np.zeros(3)).dependent for _ in range(trials))
        assert abs(errors / trials - (0.3**3 + 3 * 0.3**2 * 0.7)) <= 0.01

    def test_vote_beats_single_fold(self):
        model = hard_instance("gaussian", "alt", 0.25)
        spec = CiTesterSpec("gaussian", c=0.25)
        single = vote = 0
        for s in range(300):
            d = sample_triplet(model, 9000, rng_seed=(32, s))
            single += not make_tester(spec).bind(d[:1000]).test(X, Y, Z).dependent
            vote += not MedianTester(make_tester(spec), 9).bind(d).test(X, Y, Z).dependent
        assert vote <= single

    def test_folds_are_contiguous_and_remainder_dropped(self):
        seen = []

        def base(x):
            seen.append((x[0, 0], len(x)))
            return CiDecision(True, 0.0, 0.0)

        data = np.arange(23.0)[:, None]
        dec = median_trick(base, 5, data)
        assert seen == [(0.0, 4), (4.0, 4), (8.0, 4), (12.0, 4), (16.0, 4)]
        assert dec == CiDecision(True, 5.0, 2.5)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            median_trick(lambda x: None, 2, np.zeros((10, 3)))
        with pytest.raises(ValueError):
            median_trick(lambda x: None, 11, np.zeros((10, 3)))

    def test_bound_median_matches_function(self):
        spec = CiTesterSpec("bernoulli", c=0.2)
        d = sample_triplet(hard_instance("bernoulli", "alt", 0.05), 1800, rng_seed=33)
        bound = MedianTester(make_tester(spec), 5).bind(d).test(X, Y, Z)
        func = median_trick(lambda x: bernoulli_test(x[:, X], x[:, Y], x[:, Z], c=0.2), 5, d)
        assert bound == func


class TestOracle:
    chain = GaussianForestModel(Dag(3, frozenset({(Z, X), (X, Y)})), {(Z, X): 0.2, (X, Y): 0.2}, (0.96, 0.96, 1.0))

    def test_chain_separated_by_middle(self):
        assert not oracle_test(self.chain, Z, Y, X).dependent

    def test_chain_marginally_dependent(self):
        dec = oracle_test(self.chain, Z, Y)
        assert dec.dependent and dec.statistic == pytest.approx(0.04)

    def test_bernoulli_collider(self):
        g = Dag(3, frozenset({(X, Z), (Y, Z)}))
        m = BernoulliForestModel(g, {(X, Z): 0.3, (Y, Z): 0.3}, {(X, Z): 1, (Y, Z): -1})
        assert not oracle_test(m, X, Y).dependent
        assert oracle_test(m, X, Y, Z).dependent

    def test_family_mismatch(self):
        with pytest.raises(ValueError):
            make_tester(CiTesterSpec("oracle-bernoulli"), self.chain)
        with pytest.raises(ValueError):
            make_tester(CiTesterSpec("oracle-gaussian"))
        assert isinstance(make_tester(CiTesterSpec("oracle-gaussian"), self.chain), OracleTester)


class TestBoundTesters:
    """The cached testers used by the learner agree with the column functions."""

    def test_gaussian(self):
        g = random_orientation(skeleton(random_polyforest(7, rng_seed=1)), rng_seed=2)
        from polyforest.models import sample_forest

        data = sample_forest(random_forest_model("gaussian", g, rng_seed=3), 400, rng_seed=4)
        bound = make_tester(CiTesterSpec("gaussian", c=0.1)).bind(data)
        for j, k in [(0, 1), (2, 5), (3, 6)]:
            conds = [None] + [l for l in range(7) if l not in (j, k)]
            stats, thr, dep = bound.decide(j, k, conds)
            for l, s_, d_ in zip(conds, stats, dep):
                ref = gaussian_test(data[:, j], data[:, k], None if l is None else data[:, l], c=0.1)
                assert s_ == pytest.approx(ref.statistic, abs=1e-10) and d_ == ref.dependent
            assert np.all(thr == 0.05)

    def test_bernoulli(self):
        g = random_orientation(skeleton(random_polyforest(7, rng_seed=5)), rng_seed=6)
        from polyforest.models import sample_forest

        data = sample_forest(random_forest_model("bernoulli", g, rng_seed=7), 300, rng_seed=8)
        bound = make_tester(CiTesterSpec("bernoulli", c=0.1)).bind(data)
        for j, k in [(0, 1), (2, 5), (3, 6)]:
            conds = [None] + [l for l in range(7) if l not in (j, k)]
            stats, _, _ = bound.decide(j, k, conds)
            for l, s_ in zip(conds, stats):
                ref = mhat_bernoulli(data[:, j], data[:, k], None if l is None else data[:, l])
                assert s_ == pytest.approx(ref, abs=1e-12)

    def test_nonparam(self):
        data = make_rng(9).random((150, 4))
        spec = CiTesterSpec("nonparam", permutations=39, seed=11)
        bound = make_tester(spec).bind(data)
        for l in (None, 2, 3):
            got = bound.test(0, 1, l)
            ref = nonparam_test(data[:, 0], data[:, 1], None if l is None else data[:, l],
                                permutations=39, seed=(11, 0 if l is None else l + 1))
            assert got == ref

    def test_gaussian_degenerate_names_column(self):
        rng = make_rng(12)
        data = rng.standard_normal((50, 3))
        data[:, 2] = 3 * data[:, 0]
        with pytest.raises(DegenerateDataError) as info:
            make_tester(CiTesterSpec("gaussian", c=0.1)).bind(data).test(0, 1, 2)
        assert info.value.column == 0
        data[:, 1] = 0.0
        with pytest.raises(DegenerateDataError) as info:
            make_tester(CiTesterSpec("gaussian", c=0.1)).bind(data)
        assert info.value.column == 1

    def test_determinism(self):
        data = make_rng(13).random((200, 3))
        for spec in (CiTesterSpec("nonparam", seed=4), CiTesterSpec("gaussian", c=0.1, folds=3)):
            assert make_tester(spec).bind(data).test(0, 1, 2) == make_tester(spec).bind(data).test(0, 1, 2)

    def test_run_test_columns(self):
        data = make_rng(14).random((100, 3))
        got = run_test(CiTesterSpec("gaussian", c=0.1), data)
        ref = gaussian_test(data[:, 0], data[:, 1], data[:, 2], c=0.1)
        assert got.dependent == ref.dependent and got.statistic == pytest.approx(ref.statistic, abs=1e-12)
        with pytest.raises(ValueError):
            run_test(CiTesterSpec("gaussian", c=0.1), data[:, :1])
