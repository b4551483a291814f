import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import leafset
from oracles import one_dim_mean_on_leg
from treespace.frechet import (
    ConvergenceError,
    MeanConfig,
    WeightedSample,
    book_integrals,
    check_mean_codim1,
    check_mean_top,
    classify_case,
    frechet_mean,
    frechet_value,
    solve_frechet_mean,
)
from treespace.geodesics import distance, geodesic, geodesic_point
from treespace.trees import Split, StratumError, Tree, random_tree

S = Split.parse


def t3_sample():
    ls = leafset(1)
    trees = (Tree(ls, {S("a|b"): 5.0}), Tree(ls, {S("a|c"): 1.0}), Tree(ls, {S("b|c"): 1.0}))
    return WeightedSample(trees)


def t4(**edges):
    return Tree(leafset(2), {S(k.replace("_", "|")): v for k, v in edges.items()})


def lognormal_sample(rng, m, n, sd=0.3):
    """Trees scattered around one binary tree, mostly in its orthant."""
    ls = leafset(m)
    centre = random_tree(ls, rng, scale=2.0)
    trees = []
    for _ in range(n):
        if rng.random() < 0.8:
            trees.append(centre.with_lengths(centre.lengths * np.exp(sd * rng.standard_normal(m))))
        else:
            trees.append(random_tree(ls, rng, scale=0.5))
    return WeightedSample(tuple(trees))


class TestWeightedSample:
    def test_uniform_default(self):
        s = t3_sample()
        assert s.weights == pytest.approx([1 / 3] * 3)

    def test_bad_sum(self):
        with pytest.raises(ValueError):
            WeightedSample(t3_sample().trees, [0.5, 0.5, 0.5])

    def test_negative(self):
        with pytest.raises(ValueError):
            WeightedSample(t3_sample().trees, [1.5, -0.25, -0.25])

    def test_deduplicated(self):
        t = t4(a_b=1.0)
        s = WeightedSample((t, t, t4(a_b=2.0))).deduplicated()
        assert len(s) == 2 and sorted(s.weights) == pytest.approx([1 / 3, 2 / 3])


class TestValue:
    def test_single_tree(self):
        t = t4(a_b=1.0, a_b_c=2.0)
        assert frechet_value(WeightedSample((t,)), t) == 0.0

    def test_two_same_orthant(self):
        a, b = t4(a_b=1.0, a_b_c=2.0), t4(a_b=4.0, a_b_c=6.0)
        mid = t4(a_b=2.5, a_b_c=4.0)
        assert frechet_value(WeightedSample((a, b)), mid) == pytest.approx(25 / 8)

    def test_three_legs_at_origin(self):
        assert frechet_value(t3_sample(), Tree.star(leafset(1))) == pytest.approx(27 / 6)


class TestMean:
    def test_three_legs(self):
        oracle = one_dim_mean_on_leg([5.0, -1.0, -1.0], [1 / 3] * 3)
        mean = frechet_mean(t3_sample())
        assert mean.edges.keys() == {S("a|b")}
        assert mean.edges[S("a|b")] == pytest.approx(1.0, abs=1e-8)
        assert oracle == pytest.approx(1.0, abs=1e-8)
        assert check_mean_top(mean, t3_sample()).residual <= 1e-12

    def test_single_tree(self):
        t = t4(a_b=1.0, a_b_c=2.0)
        res = solve_frechet_mean(WeightedSample((t,)))
        assert res.tree == t and res.certificate.residual == 0.0

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    def test_two_trees_weighted_point(self, seed, w):
        rng = np.random.default_rng(seed)
        ls = leafset(2)
        a, b = random_tree(ls, rng), random_tree(ls, rng)
        mean = frechet_mean(WeightedSample((a, b), [1 - w, w]), tol=1e-10)
        expected = geodesic_point(geodesic(a, b), w)
        assert distance(mean, expected) <= 1e-7 * max(1.0, a.norm + b.norm)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_single_orthant_is_euclidean(self, seed, m):
        rng = np.random.default_rng(seed)
        centre = random_tree(leafset(m), rng)
        trees = tuple(centre.with_lengths(centre.lengths * rng.uniform(0.5, 1.5, m)) for _ in range(6))
        w = rng.dirichlet(np.ones(6))
        mean = frechet_mean(WeightedSample(trees, w), tol=1e-10)
        expected = w @ np.array([t.lengths for t in trees])
        assert mean.masks == centre.masks
        assert mean.lengths == pytest.approx(expected, abs=1e-8)

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3))
    def test_certificate_and_local_optimality(self, seed, m):
        rng = np.random.default_rng(seed)
        sample = lognormal_sample(rng, m, 12)
        res = solve_frechet_mean(sample)
        cert = res.certificate
        if cert.stratum_codim <= 1:
            assert cert.is_mean
            assert cert.residual <= 1e-8 * (1 + res.tree.norm)
        f0 = frechet_value(sample, res.tree)
        # nearby trees along geodesics to sample points do no better
        for t in sample.trees[:4]:
            p = geodesic_point(geodesic(res.tree, t), 1e-3)
            assert frechet_value(sample, p) >= f0 - 1e-10 * max(1.0, f0)

    @settings(max_examples=15)
    @given(st.integers(0, 2**32 - 1))
    def test_seed_independent(self, seed):
        rng = np.random.default_rng(seed)
        sample = lognormal_sample(rng, 3, 10)
        a = solve_frechet_mean(sample, MeanConfig(seed=1)).tree
        b = solve_frechet_mean(sample, MeanConfig(seed=2)).tree
        assert distance(a, b) <= 10 * 1e-8 * (1 + a.norm)

    def test_polish_descends(self):
        rng = np.random.default_rng(3)
        res = solve_frechet_mean(lognormal_sample(rng, 3, 20))
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-12 * (1 + np.abs(h[:-1])))

    def test_deep_face_note(self):
        # symmetric mass around the star tree of T_4
        ls = leafset(2)
        trees = [Tree._from_masks(ls, topo, np.ones(2)) for topo in _all_topologies(ls)]
        res = solve_frechet_mean(WeightedSample(tuple(trees)))
        assert res.tree.codim == 2
        assert not res.certificate.is_mean
        assert res.certificate.note == "codim >= 2, unsupported certificate"

    def test_budget(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ConvergenceError) as info:
            solve_frechet_mean(lognormal_sample(rng, 3, 20), MeanConfig(max_iter=1, warm_sweeps=0))
        assert info.value.iterations >= 1


def _all_topologies(ls):
    from treespace.trees import binary_resolutions

    return binary_resolutions(ls, ())


class TestCodimOne:
    base = t4(a_b=2.0)

    def test_symmetric_pages(self):
        trees = (t4(a_b=2.0, a_b_c=1.0), t4(a_b=2.0, a_b_d=1.0), t4(a_b=2.0, c_d=1.0))
        cert = check_mean_codim1(self.base, WeightedSample(trees))
        assert cert.book_integrals == pytest.approx((1 / 3,) * 3)
        # equal positive integrals satisfy all three inequalities strictly
        assert cert.case_label == "a" and cert.is_mean

    def test_spine_only(self):
        trees = (t4(a_b=1.0), t4(a_b=3.0))
        cert = check_mean_codim1(self.base, WeightedSample(trees))
        assert cert.book_integrals == (0.0, 0.0, 0.0)
        assert cert.case_label == "d" and cert.is_mean

    def test_violated(self):
        trees = (t4(a_b=2.0, a_b_c=1.0), t4(a_b=2.0, a_b_c=1.0), t4(a_b=2.0, a_b_d=1.0))
        sample = WeightedSample(trees)
        cert = check_mean_codim1(self.base, sample)
        assert cert.book_integrals == pytest.approx((2 / 3, 1 / 3, 0.0))
        assert not cert.is_mean
        mean = frechet_mean(sample)
        assert mean.is_binary and S("a|b|c") in mean.edges
        assert frechet_value(sample, mean) < frechet_value(sample, self.base)

    def test_one_equality(self):
        label, equal = classify_case([0.5, 0.25, 0.25])
        assert label == "b" and list(equal) == [True, False, False]

    def test_two_equalities(self):
        assert classify_case([0.5, 0.5, 0.0])[0] == "c"

    def test_spine_residual(self):
        cert = check_mean_codim1(self.base, WeightedSample((t4(a_b=3.0),)))
        assert cert.residual == pytest.approx(1.0) and not cert.is_mean

    def test_needs_codim_one(self):
        with pytest.raises(StratumError):
            check_mean_codim1(t4(a_b=1.0, a_b_c=1.0), t3_like())

    def test_integrals_chart(self):
        chart, integrals, spine = book_integrals(self.base, WeightedSample((t4(a_b=2.5, c_d=2.0),)))
        assert integrals == pytest.approx([0.0, 0.0, 2.0]) and spine == pytest.approx([0.5])


def t3_like():
    return WeightedSample((t4(a_b=1.0),))


class TestTopCertificate:
    def test_single(self):
        t = t4(a_b=1.0, a_b_c=1.0)
        assert check_mean_top(t, WeightedSample((t,))).residual == 0.0

    def test_average(self):
        a, b = t4(a_b=1.0, a_b_c=2.0), t4(a_b=4.0, a_b_c=6.0)
        c = check_mean_top(t4(a_b=1.75, a_b_c=3.0), WeightedSample((a, b), [0.75, 0.25]))
        assert c.residual <= 1e-12 and c.is_mean

    def test_needs_binary(self):
        with pytest.raises(StratumError):
            check_mean_top(t4(a_b=1.0), t3_like())
