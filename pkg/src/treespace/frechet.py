"""Fréchet means of weighted tree samples and their optimality certificates.

The mean is found in two phases.  A few sweeps of cyclic geodesic averaging
give a starting point; then a projected damped Newton method minimises the
Fréchet function over the closed orthant of the current topology, using
``g = -sum w log_x(T)`` and ``H = I - sum w M_x(T)``.  When the minimiser over
the orthant sits on a face, the face is tested for optimality in tree space:
a codimension-one face by the open-book inequalities on ``I_alpha, I_beta,
I_gamma``, deeper faces by probing every binary orthant around it.  A failed
test names an orthant in which the function still decreases, and the solver
moves there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodesics import _raw_support, geodesic, geodesic_point
from .logmap import PAGES, SPINE, _log_jacobian, book_chart, book_log, phi
from .trees import StratumError, Tree, binary_resolutions, masks_compatible

__all__ = [
    "WeightedSample",
    "MeanCertificate",
    "MeanConfig",
    "MeanResult",
    "ConvergenceError",
    "frechet_value",
    "frechet_mean",
    "solve_frechet_mean",
    "check_mean_top",
    "check_mean_codim1",
    "book_integrals",
    "classify_case",
]

WEIGHT_SUM_TOL = 1e-12
CASE_RTOL = 1e-9


class ConvergenceError(RuntimeError):
    """The solver hit its iteration cap.  Carries the last iterate."""

    def __init__(self, message: str, last: Tree, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3g} after {iterations} iterations)")
        self.last = last
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class WeightedSample:
    """Trees on one leaf set with probability weights (uniform by default)."""

    trees: tuple[Tree, ...]
    weights: np.ndarray = None

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise ValueError("sample is empty")
        for t in trees[1:]:
            trees[0].same_leafset(t)
        if self.weights is None:
            w = np.full(len(trees), 1.0 / len(trees))
        else:
            w = np.array(self.weights, dtype=float)
            if w.shape != (len(trees),):
                raise ValueError("one weight per tree is required")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and non-negative")
            if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.flags.writeable = False
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, trees, weights) -> "WeightedSample":
        w = np.asarray(weights, dtype=float)
        return cls(tuple(trees), w / w.sum())

    @property
    def leafset(self):
        return self.trees[0].leafset

    def __len__(self):
        return len(self.trees)

    def deduplicated(self) -> "WeightedSample":
        """Merge repeated trees, summing their weights."""
        acc: dict[Tree, float] = {}
        for t, w in zip(self.trees, self.weights):
            acc[t] = acc.get(t, 0.0) + float(w)
        return WeightedSample.normalized(list(acc), list(acc.values()))


@dataclass(frozen=True)
class MeanCertificate:
    """Outcome of an optimality check at a candidate mean.

    ``residual`` is the first-order residual: for a binary candidate the norm
    of ``sum w Phi - candidate``; in codimension one the norm of the summed
    spine coordinates.  ``book_integrals`` and ``case_label`` are set only in
    codimension one.
    """

    mean: Tree
    stratum_codim: int
    residual: float
    is_mean: bool
    book_integrals: tuple[float, float, float] | None = None
    case_label: str | None = None
    note: str | None = None


@dataclass(frozen=True)
class MeanConfig:
    tol: float = 1e-8
    max_iter: int = 100_000
    warm_sweeps: int = 5
    seed: int = 0
    max_switches: int = 100
    certify: bool = True


@dataclass
class MeanResult:
    tree: Tree
    certificate: MeanCertificate | None
    iterations: int
    switches: int
    history: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------- #
# Fréchet function                                                            #
# --------------------------------------------------------------------------- #


def frechet_value(sample: WeightedSample, x: Tree) -> float:
    """Half the weighted mean squared distance from ``x`` to the sample."""
    xm, xl = x.masks, x.lengths.tolist()
    total = 0.0
    for t, w in zip(sample.trees, sample.weights):
        x.same_leafset(t)
        total += w * _raw_support(xm, xl, t.masks, t.lengths.tolist()).length() ** 2
    return 0.5 * total


class _Objective:
    """Fréchet function on closed binary orthants, with bulk fast paths.

    For a topology ``topo`` a sample tree ``T`` is "simple" when its edges
    outside ``topo`` (the rest ``T_R``) are each incompatible with every edge
    of ``topo`` that ``T`` lacks (``x_R``).  Its geodesic then has at most one
    leg, through the face spanned by the shared edges, and

        log = (T_C - x_C, -(|x_R| + |T_R|) x_R / |x_R|).

    Trees of the orthant's own topology are the case ``T_R`` empty.  Simple
    trees are grouped by the index set ``R`` and handled in bulk; the rest go
    through the full support computation.
    """

    def __init__(self, sample: WeightedSample):
        self.sample = sample
        self.trees = sample.trees
        self.w = np.asarray(sample.weights)
        self._groups: dict[tuple[int, ...], tuple] = {}
        self.evaluations = 0

    def groups(self, topo):
        g = self._groups.get(topo)
        if g is not None:
            return g
        pos = {k: j for j, k in enumerate(topo)}
        buckets: dict[tuple[int, ...], list[int]] = {}
        other = []
        for i, t in enumerate(self.trees):
            rest_t = [k for k in t.masks if k not in pos]
            shared = set(t.masks) & pos.keys()
            rest_x = tuple(j for j, k in enumerate(topo) if k not in shared)
            if rest_t and not all(
                not masks_compatible(a, topo[j]) for a in rest_t for j in rest_x
            ):
                other.append(i)
                continue
            buckets.setdefault(rest_x if rest_t else (), []).append(i)
        simple = []
        for rest, idx in buckets.items():
            lmat = np.zeros((len(idx), len(topo)))
            tn = np.zeros(len(idx))
            for r, i in enumerate(idx):
                t = self.trees[i]
                for k, x in zip(t.masks, t.lengths):
                    if k in pos:
                        lmat[r, pos[k]] = x
                    else:
                        tn[r] += x * x
            common = np.ones(len(topo), dtype=bool)
            common[list(rest)] = False
            simple.append((np.array(idx, dtype=int), np.array(rest, dtype=int), common, lmat, np.sqrt(tn)))
        g = (simple, other)
        if len(self._groups) > 256:
            self._groups.clear()
        self._groups[topo] = g
        return g

    def value(self, topo, x) -> float:
        self.evaluations += 1
        simple, other = self.groups(topo)
        w = self.w
        total = 0.0
        other = list(other)
        for idx, rest, common, lmat, tn in simple:
            xr = float(np.linalg.norm(x[rest])) if len(rest) else 0.0
            d2 = np.sum((lmat[:, common] - x[common]) ** 2, axis=1) + (xr + tn) ** 2
            total += float(w[idx] @ d2)
        if other:
            keep = x > 0
            xm = [k for k, z in zip(topo, keep) if z]
            xl = x[keep].tolist()
            for i in other:
                t = self.trees[i]
                total += w[i] * _raw_support(xm, xl, t.masks, t.lengths.tolist()).length() ** 2
        return 0.5 * total

    def gradient(self, topo, x, want_hessian=True):
        """``(value, g, H)`` with ``g = -sum w log_x`` and ``H = I - sum w M_x``."""
        self.evaluations += 1
        simple, other = self.groups(topo)
        w = self.w
        m = len(topo)
        total_log = np.zeros(m)
        msum = np.zeros((m, m))
        value = 0.0
        other = list(other)
        for idx, rest, common, lmat, tn in simple:
            xr_vec = x[rest]
            xr = float(np.linalg.norm(xr_vec)) if len(rest) else 0.0
            if len(rest) and xr <= 0 and np.any(tn > 0):
                # direction of approach to the face matters: use the general path
                other.extend(idx.tolist())
                continue
            wg = w[idx]
            diff = lmat[:, common] - x[common]
            total_log[common] += wg @ diff
            value += float(wg @ np.sum(diff * diff, axis=1))
            if len(rest):
                if xr > 0:
                    total_log[rest] += -float(wg @ (xr + tn)) / xr * xr_vec
                value += float(wg @ (xr + tn) ** 2)
                if want_hessian and len(rest) > 1 and xr > 0:
                    mdag = np.eye(len(rest)) / xr - np.outer(xr_vec, xr_vec) / xr**3
                    msum[np.ix_(rest, rest)] += -float(wg @ tn) * mdag
        for i in other:
            t = self.trees[i]
            coords, big_m, _, _ = _log_jacobian(topo, x, t.masks, t.lengths.tolist(), want_hessian)
            total_log += w[i] * coords
            value += w[i] * float(coords @ coords)
            if want_hessian:
                msum += w[i] * big_m
        hess = np.eye(m) - msum if want_hessian else None
        return 0.5 * value, -total_log, hess


# --------------------------------------------------------------------------- #
# Orthant solver                                                              #
# --------------------------------------------------------------------------- #


def _kkt_residual(x, g) -> float:
    r = np.where(x > 0, g, np.minimum(g, 0.0))
    return float(np.linalg.norm(r))


def _orthant_solve(obj: _Objective, topo, x, tol, budget, history):
    """Minimise over the closed orthant of ``topo``.

    Returns ``(x, iterations, status)`` with status ``"converged"``,
    ``"stalled"`` (no descent along the projected Newton or gradient path,
    typically at a non-smooth face) or ``"budget"``.
    """
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    f, g, h = obj.gradient(topo, x)
    step = math.inf
    it = 0
    while it < budget:
        scale = 1.0 + float(np.linalg.norm(x))
        res = _kkt_residual(x, g)
        if res <= tol * scale and (step <= tol * scale or res <= 1e-3 * tol * scale):
            return x, it, "converged"
        it += 1
        # coordinates close to the face and pushed towards it are treated as on it
        near = min(1e-3 * scale, float(np.linalg.norm(x - np.maximum(x - g, 0.0))))
        active = (x <= near) & (g > 0) | (x <= 0) & (g >= 0)
        free = ~active
        d = np.where(active, -g, 0.0)
        if np.any(free):
            try:
                d[free] = -np.linalg.solve(h[np.ix_(free, free)], g[free])
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        x_new, f_new = _line_search(obj, topo, x, f, g, d)
        grad_new = None
        if x_new is None:
            # the decrease may be below rounding; keep a full step that halves the residual
            x_try = _project(x + d, SNAP_REL * scale)
            if np.any(x_try != x) and obj.value(topo, x_try) <= f + 1e-15 * max(abs(f), 1.0):
                grad_try = obj.gradient(topo, x_try)
                if _kkt_residual(x_try, grad_try[1]) <= 0.5 * res:
                    x_new, f_new, grad_new = x_try, grad_try[0], grad_try
        if x_new is None:
            d = -np.where(active, 0.0, g)
            x_new, f_new = _line_search(obj, topo, x, f, g, d)
        if x_new is None:
            return x, it, "converged" if res <= tol * scale else "stalled"
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        history.append(f_new)
        f, g, h = grad_new if grad_new is not None else obj.gradient(topo, x)
    return x, it, "budget"


SNAP_REL = 1e-13


def _project(x, snap):
    """Project onto the closed orthant, sending coordinates below ``snap`` to the face."""
    return np.where(x > snap, x, 0.0)


def _line_search(obj, topo, x, f, g, d, shrink=0.5, c=1e-4, max_halvings=40):
    alpha = 1.0
    snap = SNAP_REL * (1.0 + float(np.linalg.norm(x)))
    for _ in range(max_halvings):
        x_new = _project(x + alpha * d, snap)
        delta = x_new - x
        if not np.any(delta):
            return None, None
        f_new = obj.value(topo, x_new)
        if f_new < f and f_new <= f + c * float(g @ delta):
            return x_new, f_new
        alpha *= shrink
    return None, None


# --------------------------------------------------------------------------- #
# Certificates                                                                #
# --------------------------------------------------------------------------- #


def check_mean_top(candidate: Tree, sample: WeightedSample, tol: float = 1e-8) -> MeanCertificate:
    """Residual of the binary-stratum mean equation ``sum w Phi(T) = candidate``."""
    if not candidate.is_binary:
        raise StratumError("candidate is not binary")
    acc = np.zeros(candidate.leafset.m)
    for t, w in zip(sample.trees, sample.weights):
        acc += w * phi(candidate, t)
    res = float(np.linalg.norm(acc - candidate.lengths))
    return MeanCertificate(candidate, 0, res, res <= tol * (1.0 + candidate.norm))


def book_integrals(candidate: Tree, sample: WeightedSample):
    """``(I_alpha, I_beta, I_gamma)`` and the summed spine coordinates."""
    chart = book_chart(candidate)
    integrals = np.zeros(3)
    spine = np.zeros(len(candidate.masks))
    for t, w in zip(sample.trees, sample.weights):
        v = book_log(chart, t)
        if v.page != SPINE:
            integrals[PAGES.index(v.page)] += w * v.coords[0]
        spine += w * v.coords[1:]
    return chart, integrals, spine


def _slacks(integrals):
    ia, ib, ic = integrals
    return np.array([ib + ic - ia, ic + ia - ib, ia + ib - ic])


def classify_case(integrals, rtol: float = CASE_RTOL) -> tuple[str, np.ndarray]:
    """Case letter from the number of equalities among the three inequalities."""
    slack = _slacks(integrals)
    tol = rtol * max(1.0, float(np.sum(integrals)))
    equal = np.abs(slack) <= tol
    return "abcd"[int(np.sum(equal))], equal


def check_mean_codim1(candidate: Tree, sample: WeightedSample, tol: float = 1e-8) -> MeanCertificate:
    """Open-book optimality test at a tree with exactly one missing edge."""
    if candidate.codim != 1:
        raise StratumError(f"candidate has codimension {candidate.codim}, not 1")
    _, integrals, spine = book_integrals(candidate, sample)
    label, equal = classify_case(integrals)
    slack = _slacks(integrals)
    ok_ineq = bool(np.all((slack >= 0) | equal))
    res = float(np.linalg.norm(spine))
    return MeanCertificate(
        candidate,
        1,
        res,
        ok_ineq and res <= tol * (1.0 + candidate.norm),
        tuple(float(v) for v in integrals),
        label,
    )


# --------------------------------------------------------------------------- #
# Driver                                                                      #
# --------------------------------------------------------------------------- #


def _warm_start(sample: WeightedSample, sweeps: int, seed: int) -> Tree:
    rng = np.random.default_rng(seed)
    n = len(sample)
    order = rng.permutation(n)
    x = sample.trees[order[0]]
    seen = float(sample.weights[order[0]])
    for sweep in range(sweeps):
        if sweep:
            order = rng.permutation(n)
        for i in order[(1 if sweep == 0 else 0):]:
            w = float(sample.weights[i])
            if w <= 0:
                continue
            seen += w
            x = geodesic_point(geodesic(x, sample.trees[i]), min(1.0, w / seen))
    return x


def _embed(tree: Tree):
    """A binary topology containing ``tree`` and the tree's lengths in it."""
    ls = tree.leafset
    topo = tree.masks if tree.is_binary else binary_resolutions(ls, tree.masks)[0]
    x = np.zeros(len(topo))
    for k, v in zip(tree.masks, tree.lengths):
        x[topo.index(k)] = v
    return tuple(topo), x


def _as_tree(leafset, topo, x) -> Tree:
    return Tree._from_masks(leafset, topo, x)


MAX_PROBED_ORTHANTS = 64


def _candidate_orthants(obj, leafset, masks_pos):
    """Binary orthants around a face worth probing for descent.

    All of them when there are few; otherwise one per sample topology, built
    from the sample tree's edges that fit the face.
    """
    allres = binary_resolutions(leafset, masks_pos)
    if len(allres) <= MAX_PROBED_ORTHANTS:
        return allres
    out = {}
    for t in obj.trees:
        fit = [k for k in t.masks if all(masks_compatible(k, j) for j in masks_pos)]
        keep = list(masks_pos)
        for k in fit:
            if k not in keep and all(masks_compatible(k, j) for j in keep):
                keep.append(k)
        topo = binary_resolutions(leafset, keep)[0]
        out[topo] = None
    return list(out)


def _probe_resolutions(obj, leafset, masks_pos, x_tree, f0, tol):
    """Look for a binary orthant around a deep face in which F still decreases."""
    best = None
    h_scale = 1e-4 * (1.0 + x_tree.norm)
    for topo in _candidate_orthants(obj, leafset, masks_pos):
        x = np.zeros(len(topo))
        for k, v in zip(x_tree.masks, x_tree.lengths):
            x[topo.index(k)] = v
        _, g, _ = obj.gradient(topo, x, want_hessian=False)
        zero = [j for j in range(len(topo)) if x[j] <= 0]
        dirs = [np.eye(len(topo))[j] for j in zero]
        pg = np.where(x > 0, -g, np.maximum(-g, 0.0))
        if np.linalg.norm(pg) > 0:
            dirs.append(pg / np.linalg.norm(pg))
        for d in dirs:
            for h in (h_scale, 1e-2 * h_scale):
                xt = np.maximum(x + h * d, 0.0)
                f = obj.value(topo, xt)
                if f < f0 - max(tol * h, 1e-14 * max(f0, 1.0)):
                    if best is None or f < best[2]:
                        best = (topo, xt, f)
    return best


def solve_frechet_mean(
    sample: WeightedSample,
    config: MeanConfig | None = None,
    start: Tree | None = None,
) -> MeanResult:
    """Fréchet mean with a certificate and the solver trace.

    ``start`` skips the averaging warm start.  Raises :class:`ConvergenceError`
    when ``config.max_iter`` Newton iterations do not suffice.
    """
    cfg = config or MeanConfig()
    ls = sample.leafset
    distinct = {t for t, w in zip(sample.trees, sample.weights) if w > 0}
    if len(distinct) == 1:
        t = next(iter(distinct))
        cert = _certify(t, sample, cfg.tol) if cfg.certify else None
        return MeanResult(t, cert, 0, 0, [0.0])

    if start is None:
        start = _warm_start(sample, cfg.warm_sweeps, cfg.seed)
    else:
        start.same_leafset(sample.trees[0])
    obj = _Objective(sample)
    topo, x = _embed(start)
    history: list[float] = [obj.value(topo, x)]
    iterations = 0
    switches = 0
    while True:
        x, it, status = _orthant_solve(obj, topo, x, cfg.tol, cfg.max_iter - iterations, history)
        iterations += it
        tree = _as_tree(ls, topo, x)
        zero = [j for j in range(len(topo)) if x[j] <= 0]
        if status == "budget" or (status == "stalled" and not zero):
            res = _kkt_residual(x, obj.gradient(topo, x, want_hessian=False)[1])
            raise ConvergenceError("Fréchet mean did not converge", tree, res, iterations)
        move = None
        if len(zero) == 1 and status == "converged":
            chart, integrals, _ = book_integrals(tree, sample)
            slack = _slacks(integrals)
            worst = int(np.argmin(slack))
            if slack[worst] < -cfg.tol * (1.0 + float(np.sum(integrals))):
                new_topo = chart.page_topology(worst)
                if new_topo != topo:
                    move = (new_topo, _embed_into(tree, new_topo))
        if move is None and (len(zero) >= 2 or status == "stalled"):
            f0 = obj.value(topo, x)
            found = _probe_resolutions(obj, ls, tree.masks, tree, f0, cfg.tol)
            if found is not None:
                move = (found[0], found[1])
        if move is None:
            cert = _certify(tree, sample, cfg.tol) if cfg.certify else None
            return MeanResult(tree, cert, iterations, switches, history)
        switches += 1
        if switches > cfg.max_switches:
            raise ConvergenceError("too many orthant switches", tree, math.nan, iterations)
        topo, x = move


def _embed_into(tree: Tree, topo) -> np.ndarray:
    x = np.zeros(len(topo))
    for k, v in zip(tree.masks, tree.lengths):
        x[topo.index(k)] = v
    return x


def _certify(tree: Tree, sample: WeightedSample, tol: float) -> MeanCertificate:
    if tree.is_binary:
        return check_mean_top(tree, sample, tol)
    if tree.codim == 1:
        return check_mean_codim1(tree, sample, tol)
    return MeanCertificate(
        tree, tree.codim, math.nan, False, note="codim >= 2, unsupported certificate"
    )


def frechet_mean(
    sample: WeightedSample,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    seed: int = 0,
) -> Tree:
    """The Fréchet mean of ``sample`` (see :func:`solve_frechet_mean`)."""
    return solve_frechet_mean(sample, MeanConfig(tol=tol, max_iter=max_iter, seed=seed)).tree
