import json
import math

import numpy as np
import pytest

from conftest import leafset
from treespace.clt import (
    BudgetExceeded,
    CltConfig,
    CltError,
    GeneratorError,
    estimate_A,
    estimate_V,
    histogram_csv,
    load_config,
    make_generator,
    predict_limit,
    residuals_csv,
    run_clt_experiment,
)
from treespace.frechet import WeightedSample
from treespace.geodesics import distance
from treespace.trees import Split, StratumError, Tree

S = Split.parse
M_CONE = np.array([[-1.664, 1.248], [1.248, -0.936]])
T4 = {"leaves": ["a", "b", "c", "d"], "root": "r"}


def t4(**edges):
    return Tree(leafset(2), {S(k.replace("_", "|")): v for k, v in edges.items()})


def book_spec(**kw):
    spec = {"type": "book", **T4, "base": {"a|b": 3.0}, "height_log_sd": 0.5, "spine_log_sd": 0.3}
    spec.update(kw)
    return spec


class TestGenerators:
    def test_point_mixture(self):
        gen = make_generator({"type": "point_mixture", **T4, "trees": ["((a,b):1,c,d)r;", {"c|d": 2}], "weights": [3, 1]})
        assert gen.weights == pytest.approx((0.75, 0.25))
        draws = gen.sample(np.random.default_rng(0), 1000)
        assert 0.7 < sum(t == gen.trees[0] for t in draws) / 1000 < 0.8

    def test_lognormal_population_moments(self):
        spec = {
            "type": "orthant_lognormal",
            **T4,
            "components": [{"splits": ["a|b|c", "a|b"], "log_mean": [1.0, 0.0], "log_sd": [0.2, 0.5]}],
        }
        gen = make_generator(spec)
        pop = gen.population(16)
        assert pop.weights.sum() == pytest.approx(1.0)
        mean = pop.weights @ np.array([t.lengths for t in pop.trees])
        # canonical order is (a|b, a|b|c)
        assert mean == pytest.approx([math.exp(0.125), math.exp(1.02)], rel=1e-10)
        draws = np.array([t.lengths for t in gen.sample(np.random.default_rng(1), 20000)])
        assert draws.mean(axis=0) == pytest.approx(mean, rel=0.02)

    def test_sd_zero_is_atom(self):
        spec = {"type": "orthant_lognormal", **T4, "components": [{"splits": ["a|b"], "log_mean": 0.0}]}
        assert len(make_generator(spec).population(10)) == 1

    def test_book_population(self):
        gen = make_generator(book_spec(page_weights=[0.2, 0.2, 0.2], spine_weight=0.4))
        pop = gen.population(8)
        pages = [t for t in pop.trees if t.codim == 0]
        assert sum(w for t, w in zip(pop.trees, pop.weights) if t.codim == 0) == pytest.approx(0.6)
        assert pages and gen.analytic_mean() == t4(a_b=3.0)

    @pytest.mark.parametrize(
        "spec",
        [
            {"type": "nope", **T4},
            {"type": "point_mixture", **T4, "trees": ["((a,b):1,c,e)r;"]},
            {"type": "book", **T4, "base": {"a|b": 1, "a|b|c": 1}},
            {"type": "orthant_lognormal", **T4, "components": [{"splits": ["a|b", "b|c"]}]},
            {"type": "orthant_lognormal", **T4, "components": [{"splits": ["a|b"], "log_sd": -1}]},
            {"type": "point_mixture", "trees": []},
        ],
    )
    def test_invalid(self, spec):
        with pytest.raises((GeneratorError, ValueError)):
            make_generator(spec)


class TestEstimates:
    def test_V_identical(self):
        t = t4(a_b=1.0, a_b_c=2.0)
        assert not estimate_V(t, WeightedSample((t, t))).any()

    def test_V_two_point(self):
        base = t4(a_b=2.0, a_b_c=3.0)
        d = np.array([0.5, -0.25])
        sample = WeightedSample((base.with_lengths(base.lengths + d), base.with_lengths(base.lengths - d)))
        assert estimate_V(base, sample) == pytest.approx(np.outer(d, d))

    def test_V_three_leaves(self):
        ls = leafset(1)
        base = Tree(ls, {S("a|b"): 1.0})
        trees = (Tree(ls, {S("a|b"): 3.0}), Tree(ls, {S("a|c"): 2.0}))
        signed = np.array([2.0, -3.0])
        assert estimate_V(base, WeightedSample(trees)) == pytest.approx(np.array([[np.var(signed)]]))

    def test_V_needs_low_codim(self):
        with pytest.raises(StratumError):
            estimate_V(Tree.star(leafset(2)), WeightedSample((t4(a_b=1.0),)))

    def test_A_identity_without_singular_mass(self):
        base = t4(a_b=2.0, a_b_c=3.0)
        est = estimate_A(base, WeightedSample((t4(a_b=1.0, a_b_c=1.0), t4(a_b=1.0, a_b_d=1.0))))
        assert est.A == pytest.approx(np.eye(2)) and est.excluded_weight == 0.0

    def test_A_three_leaves(self):
        ls = leafset(1)
        base = Tree(ls, {S("a|b"): 1.0})
        est = estimate_A(base, WeightedSample((Tree(ls, {S("a|c"): 2.0}), Tree(ls, {S("b|c"): 1.0}))))
        assert est.A == pytest.approx(np.eye(1))

    def test_A_cone_point(self):
        est = estimate_A(t4(a_b=3.0, a_b_c=4.0), WeightedSample((t4(a_d=5.0, a_c_d=12.0),)))
        assert est.mean_M == pytest.approx(M_CONE, abs=1e-12)
        assert est.A == pytest.approx(np.linalg.inv(np.eye(2) - M_CONE), abs=1e-12)

    def test_A_excludes_boundary(self):
        ls = leafset(4)
        base = Tree(ls, {S("a|b"): 1.0, S("d|e"): 2.0, S("a|b|c"): 1.0, S("d|e|f"): 1.0})
        tie = Tree(ls, {S("b|c"): 1.0, S("e|f"): 2.0, S("a|b|c"): 1.0, S("d|e|f"): 1.0})
        est = estimate_A(base, WeightedSample((tie, base), [0.25, 0.75]))
        assert est.excluded_weight == pytest.approx(0.25)


class TestPredict:
    def test_point_mass(self):
        t = t4(a_b=3.0, a_b_c=4.0)
        law = predict_limit(t, WeightedSample((t,)))
        assert law.kind == "gaussian" and not law.covariance.any()

    def test_non_singular_is_V(self):
        base = t4(a_b=2.0, a_b_c=3.0)
        d = np.array([0.5, -0.25])
        sample = WeightedSample((base.with_lengths(base.lengths + d), base.with_lengths(base.lengths - d)))
        law = predict_limit(base, sample)
        assert law.A == pytest.approx(np.eye(2))
        assert law.covariance == pytest.approx(law.V)

    def test_not_the_mean(self):
        with pytest.raises(CltError):
            predict_limit(t4(a_b=2.0, a_b_c=3.0), WeightedSample((t4(a_b=1.0, a_b_c=1.0),)))

    def test_three_leg_symmetric(self):
        ls = leafset(1)
        trees = tuple(Tree(ls, {S(s): 1.0}) for s in ("a|b", "a|c", "b|c"))
        law = predict_limit(Tree.star(ls), WeightedSample(trees))
        assert law.kind == "spine_gaussian" and law.case_label == "a"
        assert law.covariance.shape == (0, 0)

    def test_book_cases(self):
        gen = make_generator(book_spec(page_weights=[0.5, 0.25, 0.25]))
        law = predict_limit(gen.base, gen.population(12))
        assert law.kind == "half_line_gaussian" and law.page == "alpha" and law.case_label == "b"
        draws = law.draw(np.random.default_rng(0), 1000)
        assert np.all(draws[:, 0] >= 0)

        gen = make_generator(book_spec(page_weights=[0.4, 0.4, 0.0], spine_weight=0.2))
        law = predict_limit(gen.base, gen.population(12))
        assert law.kind == "folded_pair" and (law.page, law.other_page) == ("alpha", "beta")

        gen = make_generator(book_spec(page_weights=[0, 0, 0], spine_weight=1.0))
        law = predict_limit(gen.base, gen.population(12))
        assert law.kind == "spine_gaussian" and law.case_label == "d"

    def test_deep_face_unsupported(self):
        with pytest.raises(StratumError):
            predict_limit(Tree.star(leafset(2)), WeightedSample((t4(a_b=1.0),)))


def small_config(**kw):
    base = {"generator": book_spec(page_weights=[0.5, 0.25, 0.25]), "n": 50, "replicates": 20, "seed": 3, "ks_draws": 2000}
    base.update(kw)
    return CltConfig.from_dict(base)


class TestExperiment:
    def test_point_mass(self):
        cfg = small_config(generator={"type": "point_mixture", **T4, "trees": ["(((a,b):1,c):2,d)r;"]})
        report = run_clt_experiment(cfg)
        assert not report.residuals.any()
        assert report.discrepancy["frobenius_vs_prediction"] == 0.0

    def test_half_line_rows(self):
        report = run_clt_experiment(small_config())
        assert report.residuals.shape == (20, 2)
        assert np.all(report.residuals[:, 0] >= 0)
        zeros = report.discrepancy["zero_fraction_first"]
        assert zeros == pytest.approx(np.mean(report.residuals[:, 0] == 0))

    def test_euclidean(self):
        spec = {"type": "orthant_lognormal", **T4, "components": [{"splits": ["a|b", "a|b|c"], "log_mean": [1.0, 1.5], "log_sd": 0.2}]}
        report = run_clt_experiment(small_config(generator=spec, replicates=200, n=30))
        assert report.law.A == pytest.approx(np.eye(2))
        assert report.discrepancy["frobenius_vs_prediction"] < 0.3

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            run_clt_experiment(small_config(max_draws=100))

    def test_deterministic(self):
        a = run_clt_experiment(small_config()).to_json()
        b = run_clt_experiment(small_config()).to_json()
        assert a == b
        assert json.loads(a)["n"] == 50

    def test_csv_outputs(self):
        report = run_clt_experiment(small_config())
        rows = residuals_csv(report).splitlines()
        assert len(rows) == 21 and rows[0].startswith("replicate,")
        hist = histogram_csv(report, bins=5).splitlines()
        assert len(hist) == 1 + 2 * 5

    def test_config_files(self, tmp_path):
        d = {"generator": book_spec(page_weights=[0.5, 0.25, 0.25]), "n": 10, "replicates": 4}
        p = tmp_path / "c.json"
        p.write_text(json.dumps(d))
        assert load_config(str(p)).n == 10
        q = tmp_path / "c.toml"
        q.write_text(
            'n = 10\nreplicates = 4\n[generator]\ntype = "point_mixture"\nleaves = ["a","b","c","d"]\n'
            'trees = ["((a,b):1,c,d)r;"]\n'
        )
        assert load_config(str(q)).generator["type"] == "point_mixture"

    @pytest.mark.parametrize("d", [{"n": 1}, {"generator": {}, "n": 0, "replicates": 5}, {"generator": {}, "n": 1, "replicates": 5, "bogus": 1}])
    def test_config_invalid(self, d):
        with pytest.raises(GeneratorError):
            CltConfig.from_dict(d)

    def test_mean_recovered(self):
        gen = make_generator(book_spec(page_weights=[0.2, 0.2, 0.2], spine_weight=0.4))
        report = run_clt_experiment(small_config(generator=book_spec(page_weights=[0.2, 0.2, 0.2], spine_weight=0.4)))
        assert distance(report.t_star, gen.base) == 0.0
        assert report.law.kind == "spine_gaussian"
