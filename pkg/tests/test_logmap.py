import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import leafset
from treespace.geodesics import distance, is_singular, on_cell_boundary
from treespace.logmap import (
    PAGES,
    SPINE,
    CellBoundaryError,
    book_chart,
    book_log,
    chart_permutation,
    chart_derivative,
    derivative_matrix,
    fold,
    log_map,
    phi,
    singular_hyperplane_check,
    spine_projection,
)
from treespace.trees import Split, StratumError, Tree, random_tree

S = Split.parse
M_CONE = np.array([[-1.664, 1.248], [1.248, -0.936]])


def t4(**edges):
    return Tree(leafset(2), {S(k.replace("_", "|")): v for k, v in edges.items()})


@pytest.fixture
def cone():
    return t4(a_b=3.0, a_b_c=4.0), t4(a_d=5.0, a_c_d=12.0)


class TestLogMap:
    def test_same_orthant(self):
        base, t = t4(a_b=1.0, a_b_c=2.0), t4(a_b=2.5, a_b_c=0.5)
        assert log_map(base, t).coords == pytest.approx([1.5, -1.5])

    def test_cone_point_example(self, cone):
        v = log_map(*cone)
        assert v.coords == pytest.approx([-10.8, -14.4], abs=1e-12)
        assert np.linalg.norm(v.coords) == pytest.approx(18.0)

    def test_three_leaf_other_leg(self):
        ls = leafset(1)
        base = Tree(ls, {S("a|b"): 2.0})
        t = Tree(ls, {S("a|c"): 5.0})
        assert log_map(base, t).coords == pytest.approx([-7.0])

    def test_base_is_zero(self, cone):
        assert log_map(cone[0], cone[0]).coords == pytest.approx([0.0, 0.0])

    def test_requires_binary_base(self):
        with pytest.raises(StratumError):
            log_map(t4(a_b=1.0), t4(a_b=2.0))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_norm_identity(self, seed, m):
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base = random_tree(ls, rng)
        t = random_tree(ls, rng, n_edges=int(rng.integers(0, m + 1)))
        assert np.linalg.norm(log_map(base, t).coords) == pytest.approx(distance(base, t), abs=1e-9)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_shuffle_invariant(self, seed, m):
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base, t = random_tree(ls, rng), random_tree(ls, rng)
        a = log_map(base, t).coords
        b = log_map(base, t, shuffle=np.random.default_rng(seed + 1)).coords
        assert a == pytest.approx(b, abs=1e-12)


class TestPhi:
    def test_same_orthant_is_target(self):
        base, t = t4(a_b=1.0, a_b_c=2.0), t4(a_b=2.5, a_b_c=0.5)
        assert phi(base, t) == pytest.approx([2.5, 0.5])

    def test_cone_point_example(self, cone):
        assert phi(*cone) == pytest.approx([-7.8, -10.4], abs=1e-12)

    def test_at_base(self, cone):
        assert phi(cone[0], cone[0]) == pytest.approx(cone[0].lengths)


class TestDerivative:
    def test_cone_point_closed_form(self, cone):
        assert np.max(np.abs(derivative_matrix(*cone) - M_CONE)) <= 1e-12

    def test_non_singular_is_zero(self):
        base, t = t4(a_b=1.0, a_b_c=2.0), t4(a_b=2.5, a_b_c=0.5)
        assert not derivative_matrix(base, t).any()

    def test_one_dimensional_parts_are_zero(self):
        # two legs, one edge each: k = m
        base, t = t4(a_b=1.0, a_b_c=2.0), t4(a_b=1.0, a_b_d=3.0)
        assert not derivative_matrix(base, t).any()

    def test_cell_boundary_raises(self):
        ls = leafset(4)
        base = Tree(ls, {S("a|b"): 1.0, S("d|e"): 2.0, S("a|b|c"): 1.0, S("d|e|f"): 1.0})
        t = Tree(ls, {S("b|c"): 1.0, S("e|f"): 2.0, S("a|b|c"): 1.0, S("d|e|f"): 1.0})
        assert on_cell_boundary(base, t)
        with pytest.raises(CellBoundaryError):
            derivative_matrix(base, t)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_finite_difference(self, seed, m):
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base = random_tree(ls, rng, scale=2.0)
        t = random_tree(ls, rng, n_edges=int(rng.integers(1, m + 1)), scale=2.0)
        assume(is_singular(base, t) and not on_cell_boundary(base, t))
        big_m = derivative_matrix(base, t)
        d = rng.standard_normal(m)
        h = 1e-6 * float(np.min(base.lengths))
        fd = (phi(base.with_lengths(base.lengths + h * d), t) - phi(base.with_lengths(base.lengths - h * d), t)) / (2 * h)
        assert np.linalg.norm(fd - d @ big_m) <= 1e-5 * max(1.0, np.linalg.norm(d @ big_m))


class TestHyperplanes:
    def test_parallel(self, cone):
        assert singular_hyperplane_check(cone[0], 2.0 * cone[0].lengths)

    def test_cone_image(self, cone):
        assert singular_hyperplane_check(cone[0], [-10.8, -14.4])

    def test_generic(self, cone):
        assert not singular_hyperplane_check(cone[0], [0.3, -1.7])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_singular_images_contained(self, seed, m):
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base = random_tree(ls, rng)
        t = random_tree(ls, rng, n_edges=int(rng.integers(0, m + 1)))
        assume(is_singular(base, t))
        assert singular_hyperplane_check(base, log_map(base, t).coords)


class TestBook:
    @pytest.fixture
    def chart(self):
        return book_chart(t4(a_b=2.0))

    def test_pages(self, chart):
        assert chart.page_splits == (S("a|b|c"), S("a|b|d"), S("c|d"))

    def test_needs_codim_one(self):
        with pytest.raises(StratumError):
            book_chart(t4(a_b=2.0, a_b_c=1.0))

    def test_straight_into_page(self, chart):
        v = book_log(chart, t4(a_b=2.0, a_b_c=1.5))
        assert v.page == "alpha" and v.coords == pytest.approx([1.5, 0.0])

    def test_other_page(self, chart):
        v = book_log(chart, t4(a_b=2.0, c_d=0.5))
        assert v.page == "gamma" and v.coords == pytest.approx([0.5, 0.0])

    def test_spine(self, chart):
        v = book_log(chart, t4(a_b=3.5))
        assert v.page == SPINE and v.coords == pytest.approx([0.0, 1.5])
        assert spine_projection(chart, t4(a_b=3.5)) == pytest.approx([1.5])

    def test_spine_projection_above_base(self, chart):
        assert spine_projection(chart, t4(a_b=2.0, a_b_d=4.0)) == pytest.approx([0.0])
        assert spine_projection(chart, chart.base) == pytest.approx([0.0])

    def test_fold(self, chart):
        a = book_log(chart, t4(a_b=2.0, a_b_c=2.0))
        g = book_log(chart, t4(a_b=2.0, c_d=2.0))
        s = book_log(chart, t4(a_b=1.0))
        assert fold(chart, a, "alpha")[0] == 2.0
        assert fold(chart, g, "alpha")[0] == -2.0
        assert all(fold(chart, s, p)[0] == 0.0 for p in PAGES)

    def test_three_leaf_book(self):
        # the star tree on three leaves: pages are the three legs, the spine is empty
        ls = leafset(1)
        chart = book_chart(Tree.star(ls))
        v = book_log(chart, Tree(ls, {S("b|c"): 2.0}))
        assert len(v.coords) == 1 and v.coords[0] == 2.0 and v.page == "gamma"

    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_norm_identity(self, seed, m):
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base = random_tree(ls, rng, n_edges=m - 1)
        t = random_tree(ls, rng, n_edges=int(rng.integers(0, m + 1)))
        v = book_log(book_chart(base), t)
        assert np.linalg.norm(v.coords) == pytest.approx(distance(base, t), abs=1e-9)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 3))
    def test_chart_derivative_limit(self, seed, m):
        # the face derivative is the limit of interior derivatives
        rng = np.random.default_rng(seed)
        ls = leafset(m)
        base = random_tree(ls, rng, n_edges=m - 1)
        chart = book_chart(base)
        t = random_tree(ls, rng)
        j = int(rng.integers(3))
        big_m, boundary = chart_derivative(chart, t, j)
        assume(not boundary)
        lengths = dict(zip(base.masks, base.lengths))
        topo = chart.page_topology(j)
        eps = 1e-7 * max(1.0, base.norm)
        near = Tree._from_masks(ls, topo, np.array([lengths.get(k, eps) for k in topo]))
        assume(not on_cell_boundary(near, t))
        perm = chart_permutation(chart, j)
        interior = derivative_matrix(near, t)[np.ix_(perm, perm)]
        assert np.max(np.abs(interior - big_m)) <= 1e-4 * max(1.0, np.max(np.abs(big_m)))
