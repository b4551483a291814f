"""Geodesics between trees: support, carrier number, length and path.

The support of the geodesic from a source to a target tree is found by
successive refinement.  Start from the single pair (all non-common source
edges | all non-common target edges) and repeatedly split any pair (A, B)
whose bipartite incompatibility graph has a vertex cover of weight < 1 under
the weights |e|^2/||A||^2 on A and |f|^2/||B||^2 on B.  Minimum-weight vertex
covers are computed by max-flow.

Edges of one tree that are compatible with every edge of the other tree are
treated as common edges of length zero in the other tree; together with the
genuinely shared edges they form the ``A_0 = B_0`` slot of the support.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trees import LeafSetMismatch, Split, Tree, TreeError, masks_compatible

__all__ = [
    "Support",
    "Geodesic",
    "common_splits",
    "compute_support",
    "geodesic",
    "distance",
    "geodesic_point",
    "carrier_number",
    "is_singular",
    "on_cell_boundary",
    "has_ratio_tie",
    "min_weight_vertex_cover",
]

RATIO_RTOL = 1e-9
FLOW_EPS = 1e-12


# --------------------------------------------------------------------------- #
# Minimum-weight vertex cover on a bipartite graph                             #
# --------------------------------------------------------------------------- #


def min_weight_vertex_cover(
    wa: Sequence[float], wb: Sequence[float], adj: Sequence[Sequence[bool]]
) -> tuple[float, list[bool], list[bool]]:
    """Minimum-weight vertex cover of a bipartite graph via max-flow.

    ``adj[i][j]`` marks an edge between left vertex ``i`` and right vertex
    ``j``.  Returns ``(weight, in_cover_left, in_cover_right)``.
    """
    p, q = len(wa), len(wb)
    # node ids: 0 source, 1..p left, p+1..p+q right, p+q+1 sink
    n = p + q + 2
    sink = n - 1
    cap = [[0.0] * n for _ in range(n)]
    # residual capacities below eps[u][v] count as saturated; the threshold is
    # relative to the capacities involved so tiny weights are still resolved
    eps = [[0.0] * n for _ in range(n)]
    nbrs: list[list[int]] = [[] for _ in range(n)]

    def link(u, v, c, tol):
        cap[u][v] = c
        eps[u][v] = eps[v][u] = tol
        nbrs[u].append(v)
        nbrs[v].append(u)

    for i in range(p):
        link(0, 1 + i, wa[i], FLOW_EPS * wa[i])
    for j in range(q):
        link(1 + p + j, sink, wb[j], FLOW_EPS * wb[j])
    for i in range(p):
        for j in range(q):
            if adj[i][j]:
                link(1 + i, 1 + p + j, math.inf, FLOW_EPS * min(wa[i], wb[j]))

    flow = 0.0
    while True:
        parent = [-1] * n
        parent[0] = 0
        queue = deque([0])
        while queue and parent[sink] < 0:
            u = queue.popleft()
            for v in nbrs[u]:
                if parent[v] < 0 and cap[u][v] > eps[u][v]:
                    parent[v] = u
                    queue.append(v)
        if parent[sink] < 0:
            break
        push = math.inf
        v = sink
        while v != 0:
            u = parent[v]
            push = min(push, cap[u][v])
            v = u
        v = sink
        while v != 0:
            u = parent[v]
            cap[u][v] -= push
            cap[v][u] += push
            v = u
        flow += push

    # parent[] of the last (failed) search marks the source side of a min cut
    reach = [x >= 0 for x in parent]
    left = [not reach[1 + i] for i in range(p)]
    right = [reach[1 + p + j] for j in range(q)]
    weight = sum(w for w, c in zip(wa, left) if c) + sum(w for w, c in zip(wb, right) if c)
    return weight, left, right


# --------------------------------------------------------------------------- #
# Raw support on clade masks                                                  #
# --------------------------------------------------------------------------- #


class _Pair:
    __slots__ = ("am", "al", "bm", "bl", "an", "bn")

    def __init__(self, am, al, bm, bl):
        self.am, self.al, self.bm, self.bl = am, al, bm, bl
        self.an = math.sqrt(sum(x * x for x in al))
        self.bn = math.sqrt(sum(x * x for x in bl))

    @property
    def ratio(self):
        return self.an / self.bn


class _RawSupport:
    """Support on masks.  ``common`` holds (mask, source length, target length)."""

    __slots__ = ("common", "pairs", "tight")

    def __init__(self, common, pairs, tight):
        self.common = common
        self.pairs = pairs
        self.tight = tight

    def length(self) -> float:
        s = sum((a - b) ** 2 for _, a, b in self.common)
        s += sum((p.an + p.bn) ** 2 for p in self.pairs)
        return math.sqrt(s)


def _refine(pair: _Pair):
    """Solve the extension problem for one pair.

    Returns ``None`` if the pair satisfies (P3), ``"tight"`` if it does only up
    to the ratio tolerance, else the two replacement pairs.
    """
    am, al, bm, bl = pair.am, pair.al, pair.bm, pair.bl
    if len(am) == 1 and len(bm) == 1:
        return None
    a2, b2 = pair.an ** 2, pair.bn ** 2
    wa = [x * x / a2 for x in al]
    wb = [x * x / b2 for x in bl]
    adj = [[not masks_compatible(a, b) for b in bm] for a in am]
    weight, left, right = min_weight_vertex_cover(wa, wb, adj)
    if weight >= 1.0 - RATIO_RTOL:
        if weight < 1.0 - FLOW_EPS or _tied_cover(wa, wb, adj):
            return "tight"
        return None
    c1 = [i for i, c in enumerate(left) if c]
    c2 = [i for i, c in enumerate(left) if not c]
    d1 = [j for j, c in enumerate(right) if not c]
    d2 = [j for j, c in enumerate(right) if c]
    if not (c1 and c2 and d1 and d2):
        # cannot happen for an exact minimum cover; treat rounding noise as a tie
        return "tight"
    return (
        _Pair([am[i] for i in c1], [al[i] for i in c1], [bm[j] for j in d1], [bl[j] for j in d1]),
        _Pair([am[i] for i in c2], [al[i] for i in c2], [bm[j] for j in d2], [bl[j] for j in d2]),
    )


def _tied_cover(wa, wb, adj) -> bool:
    """Whether a cover splitting both sides has weight within tolerance of 1.

    Such a cover is a refinement with equal ratios, so the support is not
    unique.  Each candidate keeps one A edge and one compatible B edge out of
    the cover; their neighbours are then forced in.
    """
    p, q = len(wa), len(wb)
    for i in range(p):
        for j in range(q):
            if adj[i][j]:
                continue
            forced_b = [jj for jj in range(q) if adj[i][jj]]
            forced_a = [ii for ii in range(p) if adj[ii][j]]
            base = sum(wa[ii] for ii in forced_a) + sum(wb[jj] for jj in forced_b)
            rest_a = [ii for ii in range(p) if ii != i and ii not in forced_a]
            rest_b = [jj for jj in range(q) if jj != j and jj not in forced_b]
            extra = 0.0
            if rest_a and rest_b:
                sub = [[adj[ii][jj] for jj in rest_b] for ii in rest_a]
                if any(any(r) for r in sub):
                    extra = min_weight_vertex_cover([wa[ii] for ii in rest_a], [wb[jj] for jj in rest_b], sub)[0]
            if base + extra <= 1.0 + RATIO_RTOL:
                return True
    return False


def _raw_support(sm, sl, tm, tl) -> _RawSupport:
    """Support for source edges ``(sm, sl)`` and target edges ``(tm, tl)``."""
    tpos = {k: i for i, k in enumerate(tm)}
    common = []
    a_m, a_l = [], []
    s_common = set()
    for k, x in zip(sm, sl):
        j = tpos.get(k)
        if j is not None:
            common.append((k, x, tl[j]))
            s_common.add(k)
        elif all(masks_compatible(k, b) for b in tm):
            common.append((k, x, 0.0))
        else:
            a_m.append(k)
            a_l.append(x)
    b_m, b_l = [], []
    for k, x in zip(tm, tl):
        if k in s_common:
            continue
        if all(masks_compatible(k, a) for a in sm):
            common.append((k, 0.0, x))
        else:
            b_m.append(k)
            b_l.append(x)
    if not a_m:
        return _RawSupport(common, [], False)

    pairs = [_Pair(a_m, a_l, b_m, b_l)]
    tight = False
    changed = True
    while changed:
        changed = False
        out = []
        for p in pairs:
            r = _refine(p)
            if r is None:
                out.append(p)
            elif r == "tight":
                tight = True
                out.append(p)
            else:
                out.extend(r)
                changed = True
        pairs = out
    return _RawSupport(common, pairs, tight)


def _support_of(a: Tree, b: Tree) -> _RawSupport:
    if a.leafset != b.leafset:
        raise LeafSetMismatch("trees have different leaf sets")
    return _raw_support(a.masks, a.lengths.tolist(), b.masks, b.lengths.tolist())


# --------------------------------------------------------------------------- #
# Public API                                                                  #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Support:
    """Paired partitions governing a geodesic.

    ``common`` maps each split of the ``A_0 = B_0`` slot to its (source, target)
    lengths; a zero on one side marks an edge compatible with the whole other
    tree.  ``pairs[i] = (A_i, B_i)`` for ``i = 1..k``.
    """

    common: dict[Split, tuple[float, float]]
    pairs: tuple[tuple[tuple[Split, ...], tuple[Split, ...]], ...]
    a_norms: tuple[float, ...]
    b_norms: tuple[float, ...]
    tight: bool = False

    @property
    def k(self) -> int:
        return len(self.pairs)

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(a / b for a, b in zip(self.a_norms, self.b_norms))

    @classmethod
    def _from_raw(cls, raw: _RawSupport, leafset) -> "Support":
        sp = leafset.split
        common = {sp(k): (float(x), float(y)) for k, x, y in raw.common}
        pairs = tuple((tuple(sp(k) for k in p.am), tuple(sp(k) for k in p.bm)) for p in raw.pairs)
        return cls(
            common,
            pairs,
            tuple(p.an for p in raw.pairs),
            tuple(p.bn for p in raw.pairs),
            raw.tight,
        )


def common_splits(a: Tree, b: Tree) -> dict[Split, tuple[float, float]]:
    """Splits present in both trees, with their lengths in ``a`` and ``b``."""
    a.same_leafset(b)
    bl = dict(zip(b.masks, b.lengths.tolist()))
    return {
        a.leafset.split(k): (float(x), bl[k])
        for k, x in zip(a.masks, a.lengths.tolist())
        if k in bl
    }


def compute_support(source: Tree, target: Tree) -> Support:
    return Support._from_raw(_support_of(source, target), source.leafset)


@dataclass(frozen=True)
class Geodesic:
    source: Tree
    target: Tree
    support: Support
    length: float

    @property
    def boundary_times(self) -> tuple[float, ...]:
        """Times at which each ``A_i`` vanishes and ``B_i`` appears."""
        return tuple(a / (a + b) for a, b in zip(self.support.a_norms, self.support.b_norms))


def geodesic(source: Tree, target: Tree) -> Geodesic:
    raw = _support_of(source, target)
    return Geodesic(source, target, Support._from_raw(raw, source.leafset), raw.length())


def distance(a: Tree, b: Tree) -> float:
    """BHV geodesic distance."""
    return _support_of(a, b).length()


def geodesic_point(g: Geodesic, t: float) -> Tree:
    """The tree at fraction ``t`` of the way along ``g``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    if t == 0.0:
        return g.source
    if t == 1.0:
        return g.target
    return _point(_support_of(g.source, g.target), g.source.leafset, t)


def _point(raw: _RawSupport, leafset, t: float) -> Tree:
    masks, lens = [], []
    for k, x, y in raw.common:
        masks.append(k)
        lens.append((1 - t) * x + t * y)
    for p in raw.pairs:
        if (1 - t) * p.an > t * p.bn:
            f = ((1 - t) * p.an - t * p.bn) / p.an
            masks.extend(p.am)
            lens.extend(x * f for x in p.al)
        elif t * p.bn > (1 - t) * p.an:
            f = (t * p.bn - (1 - t) * p.an) / p.bn
            masks.extend(p.bm)
            lens.extend(x * f for x in p.bl)
    return Tree._from_masks(leafset, masks, lens)


def _carrier(ratios: Sequence[float], rtol: float = RATIO_RTOL) -> int:
    if not ratios:
        return 0
    k = 1
    for r0, r1 in zip(ratios, ratios[1:]):
        if r1 - r0 > rtol * max(r0, r1):
            k += 1
    return k


def carrier_number(a: Tree, b: Tree) -> int:
    """Number of orthant changes along the geodesic; tied legs count once."""
    raw = _support_of(a, b)
    return _carrier([p.ratio for p in raw.pairs])


def is_singular(a: Tree, b: Tree) -> bool:
    """Whether ``b`` is a singular point with respect to the binary tree ``a``."""
    if not a.is_binary:
        raise TreeError("is_singular needs a binary (top-dimensional) base tree")
    raw = _support_of(a, b)
    return _carrier([p.ratio for p in raw.pairs]) < a.leafset.m - len(raw.common)


def has_ratio_tie(ratios: Sequence[float], tol: float = RATIO_RTOL) -> bool:
    """Whether two adjacent ratios agree to relative tolerance ``tol``."""
    return any(abs(r1 - r0) <= tol * max(abs(r0), abs(r1)) for r0, r1 in zip(ratios, ratios[1:]))


def on_cell_boundary(a: Tree, b: Tree, tol: float = RATIO_RTOL) -> bool:
    """Whether the support of the geodesic is (numerically) non-unique.

    True when adjacent ratios tie, or when some pair only just satisfies the
    refinement test.
    """
    raw = _support_of(a, b)
    return raw.tight or has_ratio_tie([p.ratio for p in raw.pairs], tol)


def support_lengths(raw: _RawSupport) -> np.ndarray:
    return np.array([p.an + p.bn for p in raw.pairs])
