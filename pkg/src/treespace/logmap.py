"""Log map, the Phi map and its derivative, and open-book charts.

At a binary base tree the log image of ``T`` is written in the base's
canonical split order.  Along a support ``(A_0; A_1..A_k | B_1..B_k)`` the
coordinates are

* ``t_j - t*_j`` for a common edge ``j``,
* ``-(||A_i|| + ||B_i||) t*_j / ||A_i||`` for ``j`` in ``A_i``,

so ``||log|| = d(T*, T)``.  Phi adds the base coordinates back.  Its derivative
with respect to the base is block diagonal with blocks ``v_i Mdag(v*_i)``,
``v_i = -||B_i||``, ``Mdag(x) = I/|x| - x x^T/|x|^3``.

At a tree with exactly one missing edge the tangent cone is an open book with
three pages.  :class:`BookChart` writes log images as (off-spine coordinate,
spine coordinates) together with a page tag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geodesics import RATIO_RTOL, _raw_support, _support_of, has_ratio_tie
from .trees import Split, StratumError, Tree, TreeError, children_of

__all__ = [
    "TangentVector",
    "BookChart",
    "CellBoundaryError",
    "PAGES",
    "log_map",
    "phi",
    "derivative_matrix",
    "singular_hyperplane_check",
    "book_chart",
    "book_log",
    "fold",
    "spine_projection",
]

PAGES = ("alpha", "beta", "gamma")
SPINE = "spine"
ZERO_EDGE_REL = 1e-9


class CellBoundaryError(ValueError):
    """The geodesic support is not locally constant, so Phi has no derivative."""


@dataclass(frozen=True)
class TangentVector:
    """A log image at ``base``.

    For a binary base ``splits`` is the base's canonical split order.  For a
    book chart the first coordinate is off-spine, ``page`` names the page it
    lives in (or ``"spine"``) and ``splits[0]`` is that page's split or None.
    """

    base: Tree
    coords: np.ndarray
    splits: tuple
    page: str | None = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def _require_binary(base: Tree) -> None:
    if not base.is_binary:
        raise StratumError(f"base tree has codimension {base.codim}; a binary base is required")


# --------------------------------------------------------------------------- #
# Binary base                                                                 #
# --------------------------------------------------------------------------- #


def log_map(base: Tree, t: Tree, shuffle: np.random.Generator | None = None) -> TangentVector:
    """Log image of ``t`` at the binary tree ``base``.

    Built as ``pi(chi(v - v*))``: the geodesic is straightened in the
    ``k + |A_0|``-dimensional chart ``v``, mapped back along the unit
    directions ``t*_{A_i}/||A_i||`` and permuted into canonical order.
    ``shuffle`` randomises the order of the edges within each part, which
    must not change the result.
    """
    _require_binary(base)
    raw = _support_of(base, t)
    m = base.leafset.m
    canon = {k: i for i, k in enumerate(base.masks)}
    tstar = base.lengths

    # u-order: common edges first, then A_1, ..., A_k
    blocks = [[k] for k, _, _ in raw.common if k in canon]
    blocks += [list(p.am) for p in raw.pairs]
    if shuffle is not None:
        blocks = [list(shuffle.permutation(b)) if len(b) > 1 else b for b in blocks]
    u_order = [k for b in blocks for k in b]
    if sorted(u_order, key=canon.get) != list(base.masks):
        raise TreeError("support does not cover the base edges")

    n_common = sum(1 for k, _, _ in raw.common if k in canon)
    dim = n_common + len(raw.pairs)
    v = np.zeros(dim)
    v_star = np.zeros(dim)
    chi = np.zeros((dim, m))
    col = 0
    for r, (k, x, y) in enumerate([c for c in raw.common if c[0] in canon]):
        v_star[r], v[r] = x, y
        chi[r, col] = 1.0
        col += 1
    for i, p in enumerate(raw.pairs):
        r = n_common + i
        v_star[r], v[r] = p.an, -p.bn
        block = blocks[r]
        for k in block:
            chi[r, col] = tstar[canon[k]] / p.an
            col += 1
    pi = np.zeros((m, m))
    for pos, k in enumerate(u_order):
        pi[pos, canon[k]] = 1.0
    coords = (v - v_star) @ chi @ pi
    return TangentVector(base, coords, base.splits)


def phi(base: Tree, t: Tree) -> np.ndarray:
    """``log_base(t) + t*`` as a vector in the base's canonical order."""
    return log_map(base, t).coords + base.lengths


def _log_jacobian(masks, lengths, tm, tl, want_m: bool = True):
    """Log coordinates and Phi derivative at a point of a closed orthant.

    ``masks`` is a binary topology and ``lengths`` may contain zeros; the
    result is then the limit from inside the orthant.  The support is taken at
    a copy with zeros raised to a tiny positive value and the formulas are
    evaluated at the exact lengths.  Returns ``(coords, M, tight, ratios)``.
    """
    x = np.asarray(lengths, dtype=float)
    work = x
    if np.any(x <= 0):
        scale = max(float(np.linalg.norm(x)), float(np.linalg.norm(tl)) if len(tl) else 0.0, 1.0)
        if np.any(x > 0):
            # stay well below every positive edge so the approach is from the face
            scale = min(scale, 100.0 * float(np.min(x[x > 0])))
        work = np.where(x > 0, x, ZERO_EDGE_REL * scale)
    raw = _raw_support(masks, work.tolist(), tm, tl)
    idx = {k: i for i, k in enumerate(masks)}
    m = len(masks)
    coords = np.empty(m)
    big_m = np.zeros((m, m)) if want_m else None
    for k, _, y in raw.common:
        i = idx.get(k)
        if i is not None:
            coords[i] = y - x[i]
    for p in raw.pairs:
        ii = [idx[k] for k in p.am]
        xa = x[ii]
        an = float(np.linalg.norm(xa))
        if an <= 0:
            xa = work[ii]
            an_dir = float(np.linalg.norm(xa))
            coords[ii] = -p.bn * xa / an_dir
            an = an_dir
        else:
            coords[ii] = -(an + p.bn) * xa / an
        if want_m and len(ii) > 1:
            block = np.eye(len(ii)) / an - np.outer(xa, xa) / an**3
            big_m[np.ix_(ii, ii)] = -p.bn * block
    ratios = [p.ratio for p in raw.pairs]
    return coords, big_m, raw.tight, ratios


def derivative_matrix(base: Tree, t: Tree) -> np.ndarray:
    """Derivative of ``Phi_base(t)`` with respect to ``base`` (row-vector convention).

    Raises :class:`CellBoundaryError` when ``t`` sits on a cell boundary, where
    Phi is only directionally differentiable.
    """
    _require_binary(base)
    _, big_m, tight, ratios = _log_jacobian(base.masks, base.lengths, t.masks, t.lengths.tolist())
    if tight or has_ratio_tie(ratios, RATIO_RTOL):
        raise CellBoundaryError("target lies on a cell boundary of the base; Phi is not differentiable")
    return big_m


def singular_hyperplane_check(base: Tree, v, tol: float = 1e-9) -> bool:
    """Whether ``v`` lies on some hyperplane ``x_i t*_j = x_j t*_i`` (``i != j``)."""
    _require_binary(base)
    v = np.asarray(v, dtype=float)
    ts = base.lengths
    bound = tol * (1.0 + np.linalg.norm(v) * np.linalg.norm(ts))
    cross = np.abs(np.outer(v, ts) - np.outer(ts, v))
    np.fill_diagonal(cross, np.inf)
    return bool(np.any(cross <= bound))


# --------------------------------------------------------------------------- #
# Codimension one: the open book                                              #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class BookChart:
    """Chart of the tangent book at a tree with one missing edge.

    ``pages`` are the three splits resolving the degree-4 vertex in canonical
    order (alpha < beta < gamma); ``spine`` are the base's own splits.
    """

    base: Tree
    spine_masks: tuple[int, ...]
    page_masks: tuple[int, int, int]

    @property
    def spine_splits(self) -> tuple[Split, ...]:
        return self.base.splits

    @property
    def page_splits(self) -> tuple[Split, Split, Split]:
        sp = self.base.leafset.split
        return tuple(sp(k) for k in self.page_masks)

    def page_index(self, page) -> int:
        if isinstance(page, int) and 0 <= page < 3:
            return page
        if isinstance(page, Split):
            masks = [self.base.leafset.mask(page)]
            if masks[0] in self.page_masks:
                return self.page_masks.index(masks[0])
        elif page in PAGES:
            return PAGES.index(page)
        raise ValueError(f"{page!r} is not a page of this chart")

    def page_tree(self, page, height: float) -> Tree:
        """The base with the edge of ``page`` inserted at ``height``."""
        k = self.page_masks[self.page_index(page)]
        return Tree._from_masks(
            self.base.leafset, self.base.masks + (k,), list(self.base.lengths) + [height]
        )

    def page_topology(self, page) -> tuple[int, ...]:
        """Masks of the page's binary orthant, in canonical order."""
        k = self.page_masks[self.page_index(page)]
        ls = self.base.leafset
        return tuple(sorted(self.base.masks + (k,), key=ls.mask_key))


def book_chart(base: Tree) -> BookChart:
    if base.codim != 1:
        raise StratumError(f"book charts need a codimension-one base, got codimension {base.codim}")
    ls = base.leafset
    for node in base.masks + (ls.full_mask,):
        kids = children_of(ls, base.masks, node)
        if len(kids) == 3:
            x1, x2, x3 = kids
            pages = sorted((x1 | x2, x1 | x3, x2 | x3), key=ls.mask_key)
            return BookChart(base, base.masks, tuple(pages))
    raise TreeError("no degree-4 vertex found")  # unreachable for codim 1


def book_log(chart: BookChart, t: Tree) -> TangentVector:
    """Log image of ``t`` in the book chart: (off-spine, spine...) plus a page tag."""
    base = chart.base
    base.same_leafset(t)
    raw = _raw_support(base.masks, base.lengths.tolist(), t.masks, t.lengths.tolist())
    idx = {k: i for i, k in enumerate(base.masks)}
    spine = np.zeros(len(base.masks))
    page, off, page_split = SPINE, 0.0, None
    tl = dict(zip(t.masks, t.lengths.tolist()))
    for j, k in enumerate(chart.page_masks):
        if k in tl:
            page, off, page_split = PAGES[j], tl[k], base.leafset.split(k)
    for k, x, y in raw.common:
        i = idx.get(k)
        if i is not None:
            spine[i] = y - x
    for p in raw.pairs:
        for k, x in zip(p.am, p.al):
            spine[idx[k]] = -(p.an + p.bn) * x / p.an
    coords = np.concatenate([[off], spine])
    return TangentVector(base, coords, (page_split,) + base.splits, page)


def fold(chart: BookChart, v: TangentVector, page) -> np.ndarray:
    """Fold the book flat onto ``page``: the other two pages go to the negative side."""
    j = chart.page_index(page)
    out = np.array(v.coords, dtype=float)
    if v.page == SPINE:
        out[0] = 0.0
    elif v.page != PAGES[j]:
        out[0] = -out[0]
    return out


def spine_projection(chart: BookChart, t: Tree) -> np.ndarray:
    return book_log(chart, t).coords[1:]


def chart_permutation(chart: BookChart, page) -> np.ndarray:
    """Index map from chart order (page first, then spine) to the page orthant's canonical order."""
    topo = chart.page_topology(page)
    k = chart.page_masks[chart.page_index(page)]
    order = (k,) + chart.spine_masks
    return np.array([topo.index(x) for x in order])


def chart_derivative(chart: BookChart, t: Tree, page) -> tuple[np.ndarray, bool]:
    """Phi derivative at the base, as the limit from inside ``page``'s orthant.

    Returned in chart order (page coordinate first).  The flag reports whether
    ``t`` is on a cell boundary.
    """
    topo = chart.page_topology(page)
    perm = chart_permutation(chart, page)
    lengths = np.zeros(len(topo))
    for k, x in zip(chart.base.masks, chart.base.lengths):
        lengths[topo.index(k)] = x
    _, big_m, tight, ratios = _log_jacobian(topo, lengths, t.masks, t.lengths.tolist())
    return big_m[np.ix_(perm, perm)], bool(tight or has_ratio_tie(ratios, RATIO_RTOL))
