"""Limit laws for sample Fréchet means and a Monte Carlo harness to check them.

Population quantities (the mean ``T*``, the log covariance ``V`` and the
correction ``A = (I - E[M])^{-1}``) are computed on a weighted quadrature
representation of the generator's distribution.  Replicates draw ``n`` trees,
solve for the sample mean and record ``sqrt(n)`` times its log image at
``T*`` in the chart the predicted law lives in.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats

from .frechet import (
    ConvergenceError,
    MeanConfig,
    WeightedSample,
    check_mean_codim1,
    check_mean_top,
    classify_case,
    solve_frechet_mean,
)
from .geodesics import RATIO_RTOL, has_ratio_tie
from .logmap import (
    PAGES,
    SPINE,
    BookChart,
    _log_jacobian,
    book_chart,
    book_log,
    chart_derivative,
    fold,
)
from .trees import LeafSet, Split, StratumError, Tree, parse_newick, to_newick

__all__ = [
    "LimitLaw",
    "CltConfig",
    "CltReport",
    "CltError",
    "BudgetExceeded",
    "GeneratorError",
    "PointMixture",
    "OrthantLogNormal",
    "LogNormalComponent",
    "BookGenerator",
    "make_generator",
    "estimate_V",
    "estimate_A",
    "predict_limit",
    "run_clt_experiment",
    "load_config",
]

DEFAULT_MAX_DRAWS = 20_000_000
MAX_CONDITION = 1e10


class CltError(RuntimeError):
    """The limit law cannot be predicted (certificate failure, ill-conditioning)."""


class BudgetExceeded(CltError):
    pass


class GeneratorError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# Generators                                                                  #
# --------------------------------------------------------------------------- #


def _leafset_from(spec: dict) -> LeafSet:
    try:
        return LeafSet(tuple(spec["leaves"]), spec.get("root", "root"))
    except KeyError as exc:
        raise GeneratorError(f"generator spec lacks {exc.args[0]!r}") from None


def _tree_from(leafset: LeafSet, spec) -> Tree:
    """A tree from Newick text or a ``{"a|b": length}`` mapping."""
    if isinstance(spec, str):
        t = parse_newick(spec, leafset.root_label)
        if t.leafset != leafset:
            raise GeneratorError(f"tree {spec!r} is not on the generator's leaf set")
        return t
    if isinstance(spec, dict):
        return Tree(leafset, {Split.parse(k): float(v) for k, v in spec.items()})
    raise GeneratorError(f"cannot read a tree from {spec!r}")


def _masks(leafset: LeafSet, splits: Sequence[str]) -> tuple[int, ...]:
    masks = [leafset.mask(Split.parse(s)) for s in splits]
    Tree(leafset, {leafset.split(k): 1.0 for k in masks})  # validates compatibility
    return tuple(sorted(masks, key=leafset.mask_key))


def _gauss_hermite(q: int):
    z, w = hermegauss(q)
    return z, w / w.sum()


def _grid(q: int, dim: int):
    """Tensor-product standard-normal quadrature: nodes (N, dim), weights (N,)."""
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    z, w = _gauss_hermite(q)
    mesh = np.meshgrid(*([z] * dim), indexing="ij")
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
    return nodes, weights


def _weighted(trees: list[Tree], weights: list[float]) -> WeightedSample:
    acc: dict[Tree, float] = {}
    for t, w in zip(trees, weights):
        if w > 0:
            acc[t] = acc.get(t, 0.0) + float(w)
    return WeightedSample.normalized(list(acc), list(acc.values()))


@dataclass(frozen=True)
class PointMixture:
    """Finitely many trees with probabilities."""

    leafset: LeafSet
    trees: tuple[Tree, ...]
    weights: tuple[float, ...]

    def sample(self, rng: np.random.Generator, n: int) -> list[Tree]:
        idx = rng.choice(len(self.trees), size=n, p=np.asarray(self.weights))
        return [self.trees[i] for i in idx]

    def population(self, q: int) -> WeightedSample:
        return _weighted(list(self.trees), list(self.weights))

    def analytic_mean(self) -> Tree | None:
        return self.trees[0] if len(set(self.trees)) == 1 else None


@dataclass(frozen=True)
class LogNormalComponent:
    """One topology with independent log-normal edge lengths."""

    masks: tuple[int, ...]
    weight: float
    log_mean: tuple[float, ...]
    log_sd: tuple[float, ...]


@dataclass(frozen=True)
class OrthantLogNormal:
    """Mixture over topologies of independent log-normal edge lengths."""

    leafset: LeafSet
    components: tuple[LogNormalComponent, ...]

    def sample(self, rng: np.random.Generator, n: int) -> list[Tree]:
        p = np.array([c.weight for c in self.components])
        which = rng.choice(len(self.components), size=n, p=p / p.sum())
        width = max(len(c.masks) for c in self.components)
        z = rng.standard_normal((n, width))
        out = []
        for i, ci in enumerate(which):
            c = self.components[ci]
            k = len(c.masks)
            lengths = np.exp(np.asarray(c.log_mean) + np.asarray(c.log_sd) * z[i, :k])
            out.append(Tree._from_masks(self.leafset, c.masks, lengths))
        return out

    def population(self, q: int) -> WeightedSample:
        trees, weights = [], []
        total = sum(c.weight for c in self.components)
        for c in self.components:
            sd = np.asarray(c.log_sd)
            random_axes = np.flatnonzero(sd > 0)
            nodes, w = _grid(q, len(random_axes))
            for node, wt in zip(nodes, w):
                logs = np.array(c.log_mean, dtype=float)
                logs[random_axes] += sd[random_axes] * node
                trees.append(Tree._from_masks(self.leafset, c.masks, np.exp(logs)))
                weights.append(c.weight / total * wt)
        return _weighted(trees, weights)

    def analytic_mean(self) -> Tree | None:
        return None


@dataclass(frozen=True)
class BookGenerator:
    """Mass on the three pages around a tree with one missing edge.

    A draw picks a page (or the spine, or one of the extra atoms).  Spine edge
    lengths are the base lengths times mean-one log-normal noise; a page draw
    adds that page's edge with log-normal height.
    """

    base: Tree
    page_weights: tuple[float, float, float]
    spine_weight: float
    height_log_mean: tuple[float, float, float]
    height_log_sd: tuple[float, float, float]
    spine_log_sd: float
    atoms: tuple[Tree, ...] = ()
    atom_weights: tuple[float, ...] = ()

    @property
    def leafset(self) -> LeafSet:
        return self.base.leafset

    @property
    def chart(self) -> BookChart:
        return book_chart(self.base)

    def _probs(self):
        p = np.array(list(self.page_weights) + [self.spine_weight] + list(self.atom_weights))
        return p / p.sum()

    def _make(self, cat: int, spine_noise, height: float) -> Tree:
        chart = self.chart
        if cat >= 4:
            return self.atoms[cat - 4]
        spine = self.base.lengths * np.exp(self.spine_log_sd * spine_noise - 0.5 * self.spine_log_sd**2)
        masks = list(self.base.masks)
        lengths = list(spine)
        if cat < 3:
            masks.append(chart.page_masks[cat])
            lengths.append(height)
        return Tree._from_masks(self.leafset, masks, lengths)

    def sample(self, rng: np.random.Generator, n: int) -> list[Tree]:
        cats = rng.choice(len(self._probs()), size=n, p=self._probs())
        spine_z = rng.standard_normal((n, len(self.base.masks)))
        height_z = rng.standard_normal(n)
        out = []
        for i, c in enumerate(cats):
            h = 0.0
            if c < 3:
                h = float(np.exp(self.height_log_mean[c] + self.height_log_sd[c] * height_z[i]))
            out.append(self._make(int(c), spine_z[i], h))
        return out

    def population(self, q: int) -> WeightedSample:
        probs = self._probs()
        d = len(self.base.masks) if self.spine_log_sd > 0 else 0
        snodes, sw = _grid(q, d)
        trees, weights = [], []
        for c, pc in enumerate(probs):
            if pc <= 0:
                continue
            if c >= 4:
                trees.append(self.atoms[c - 4])
                weights.append(pc)
                continue
            hz, hw = (np.zeros(1), np.ones(1))
            if c < 3 and self.height_log_sd[c] > 0:
                hz, hw = _gauss_hermite(q)
            for node, wn in zip(snodes, sw):
                noise = node if d else np.zeros(len(self.base.masks))
                for z, wz in zip(hz, hw):
                    h = float(np.exp(self.height_log_mean[c] + self.height_log_sd[c] * z)) if c < 3 else 0.0
                    trees.append(self._make(c, noise, h))
                    weights.append(pc * wn * wz)
        return _weighted(trees, weights)

    def analytic_mean(self) -> Tree | None:
        # mean-one spine noise keeps the spine coordinates centred on the base
        return self.base if not self.atoms else None


def _triple(v, name) -> tuple[float, float, float]:
    if np.isscalar(v):
        return (float(v),) * 3
    v = tuple(float(x) for x in v)
    if len(v) != 3:
        raise GeneratorError(f"{name} needs one value or three (one per page)")
    return v


def make_generator(spec: dict):
    """Build a generator from its JSON/TOML description."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise GeneratorError("generator spec must be a table with a 'type'")
    kind = spec["type"]
    ls = _leafset_from(spec)
    if kind == "point_mixture":
        trees = tuple(_tree_from(ls, t) for t in spec["trees"])
        w = spec.get("weights") or [1.0] * len(trees)
        if len(w) != len(trees) or min(w) < 0 or sum(w) <= 0:
            raise GeneratorError("point_mixture weights must be non-negative, one per tree")
        total = float(sum(w))
        return PointMixture(ls, trees, tuple(float(x) / total for x in w))
    if kind == "orthant_lognormal":
        comps = []
        for c in spec["components"]:
            masks = _masks(ls, c["splits"])
            k = len(masks)
            order = [sorted(masks, key=ls.mask_key).index(ls.mask(Split.parse(s))) for s in c["splits"]]
            mean = np.broadcast_to(np.asarray(c.get("log_mean", 0.0), dtype=float), (k,))
            sd = np.broadcast_to(np.asarray(c.get("log_sd", 0.0), dtype=float), (k,))
            if np.any(sd < 0):
                raise GeneratorError("log_sd must be non-negative")
            # per-split parameters are given in the order the splits are listed
            mean_c, sd_c = np.empty(k), np.empty(k)
            mean_c[order], sd_c[order] = mean, sd
            comps.append(LogNormalComponent(masks, float(c.get("weight", 1.0)), tuple(mean_c), tuple(sd_c)))
        if not comps or sum(c.weight for c in comps) <= 0:
            raise GeneratorError("orthant_lognormal needs components with positive total weight")
        return OrthantLogNormal(ls, tuple(comps))
    if kind == "book":
        base = _tree_from(ls, spec["base"])
        if base.codim != 1:
            raise GeneratorError("book base must miss exactly one edge")
        atoms = tuple(_tree_from(ls, a["tree"]) for a in spec.get("atoms", []))
        atom_w = tuple(float(a["weight"]) for a in spec.get("atoms", []))
        gen = BookGenerator(
            base,
            _triple(spec.get("page_weights", 1.0), "page_weights"),
            float(spec.get("spine_weight", 0.0)),
            _triple(spec.get("height_log_mean", 0.0), "height_log_mean"),
            _triple(spec.get("height_log_sd", 0.0), "height_log_sd"),
            float(spec.get("spine_log_sd", 0.0)),
            atoms,
            atom_w,
        )
        if np.any(gen._probs() < 0):
            raise GeneratorError("book weights must be non-negative")
        return gen
    raise GeneratorError(f"unknown generator type {kind!r}")


# --------------------------------------------------------------------------- #
# Population quantities                                                       #
# --------------------------------------------------------------------------- #


def _weighted_cov(rows: np.ndarray, w: np.ndarray) -> np.ndarray:
    mean = w @ rows
    c = rows - mean
    return (c * w[:, None]).T @ c


def _chart_logs(base: Tree, sample: WeightedSample, page=None) -> np.ndarray:
    if base.is_binary:
        return np.array(
            [_log_jacobian(base.masks, base.lengths, t.masks, t.lengths.tolist(), False)[0] for t in sample.trees]
        )
    chart = book_chart(base)
    page = 0 if page is None else page
    return np.array([fold(chart, book_log(chart, t), page) for t in sample.trees])


def estimate_V(base: Tree, sample: WeightedSample, page=None) -> np.ndarray:
    """Weighted covariance of the log images at ``base``.

    At a codimension-one base the book is first folded onto ``page`` (alpha by
    default) and the matrix is in chart order (off-spine first).
    """
    if base.codim > 1:
        raise StratumError("limit laws need a base of codimension 0 or 1")
    rows = _chart_logs(base, sample, page)
    return _weighted_cov(rows, np.asarray(sample.weights))


@dataclass(frozen=True)
class AEstimate:
    A: np.ndarray
    mean_M: np.ndarray
    excluded_weight: float
    condition_number: float


def estimate_A(base: Tree, sample: WeightedSample, page=None) -> AEstimate:
    """``(I - E[M])^{-1}`` with cell-boundary sample points left out.

    The excluded weight is reported; the remaining weights are renormalised.
    """
    if base.codim > 1:
        raise StratumError("limit laws need a base of codimension 0 or 1")
    m = base.leafset.m
    acc = np.zeros((m, m))
    kept = 0.0
    excluded = 0.0
    chart = None if base.is_binary else book_chart(base)
    for t, w in zip(sample.trees, sample.weights):
        if chart is None:
            _, big_m, tight, ratios = _log_jacobian(base.masks, base.lengths, t.masks, t.lengths.tolist())
            boundary = tight or has_ratio_tie(ratios, RATIO_RTOL)
        else:
            big_m, boundary = chart_derivative(chart, t, 0 if page is None else page)
        if boundary:
            excluded += w
            continue
        acc += w * big_m
        kept += w
    mean_m = acc / kept if kept > 0 else acc
    mat = np.eye(m) - mean_m
    cond = float(np.linalg.cond(mat))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise CltError(f"I - E[M] is ill-conditioned (condition number {cond:.3g}); mean M = {mean_m.tolist()}")
    return AEstimate(np.linalg.inv(mat), mean_m, float(excluded), cond)


@dataclass(frozen=True)
class LimitLaw:
    """Predicted law of ``sqrt(n) (T_n - T*)``.

    ``covariance`` is that of the underlying Gaussian ``eta``; for
    ``half_line_gaussian`` the first coordinate is ``max(0, eta_1)``, for
    ``folded_pair`` it is signed (positive on ``page``, negative on
    ``other_page``).  ``page`` names the fold used for the chart.
    """

    kind: str
    covariance: np.ndarray
    A: np.ndarray
    V: np.ndarray
    case_label: str | None = None
    page: str | None = None
    other_page: str | None = None
    excluded_weight: float = 0.0
    condition_number: float = 1.0

    @property
    def dimension(self) -> int:
        return self.covariance.shape[0]

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        vals, vecs = np.linalg.eigh(0.5 * (self.covariance + self.covariance.T))
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        z = rng.standard_normal((size, self.dimension)) @ root.T
        if self.kind == "half_line_gaussian":
            z[:, 0] = np.maximum(z[:, 0], 0.0)
        return z


def predict_limit(base: Tree, sample: WeightedSample, tol: float = 1e-6) -> LimitLaw:
    """Limit law of sample means around ``base``, the mean of ``sample``."""
    scale = 1.0 + base.norm
    if base.is_binary:
        cert = check_mean_top(base, sample, tol)
        if cert.residual > tol * scale:
            raise CltError(f"base is not the mean: residual {cert.residual:.3g}")
        a = estimate_A(base, sample)
        v = estimate_V(base, sample)
        cov = a.A.T @ v @ a.A
        return LimitLaw("gaussian", cov, a.A, v, None, None, None, a.excluded_weight, a.condition_number)
    if base.codim != 1:
        raise StratumError("limit laws at codimension >= 2 are not supported")
    cert = check_mean_codim1(base, sample, tol)
    if not cert.is_mean:
        raise CltError(
            f"base is not the mean: integrals {cert.book_integrals}, spine residual {cert.residual:.3g}"
        )
    label, equal = classify_case(np.array(cert.book_integrals))
    pages_eq = [PAGES[j] for j in range(3) if equal[j]]
    if label in ("a", "d"):
        page = PAGES[0]
        a = estimate_A(base, sample, page)
        v = estimate_V(base, sample, page)
        a_s, v_s = a.A[1:, 1:], v[1:, 1:]
        cov = a_s.T @ v_s @ a_s
        return LimitLaw("spine_gaussian", cov, a_s, v_s, label, None, None, a.excluded_weight, a.condition_number)
    page = pages_eq[0]
    a = estimate_A(base, sample, page)
    v = estimate_V(base, sample, page)
    cov = a.A.T @ v @ a.A
    if label == "b":
        return LimitLaw("half_line_gaussian", cov, a.A, v, label, page, None, a.excluded_weight, a.condition_number)
    return LimitLaw("folded_pair", cov, a.A, v, label, page, pages_eq[1], a.excluded_weight, a.condition_number)


# --------------------------------------------------------------------------- #
# Experiment harness                                                          #
# --------------------------------------------------------------------------- #


@dataclass
class CltConfig:
    generator: dict
    n: int
    replicates: int
    seed: int = 0
    quadrature_nodes: int = 16
    mean_tol: float = 1e-10
    max_iter: int = 10_000
    ks_draws: int = 100_000
    histogram_bins: int = 40
    max_draws: int = DEFAULT_MAX_DRAWS
    threads: int | None = None
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "CltConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise GeneratorError(f"unknown config keys: {sorted(extra)}")
        for key in ("generator", "n", "replicates"):
            if key not in d:
                raise GeneratorError(f"config lacks {key!r}")
        cfg = cls(**d)
        if cfg.n < 1 or cfg.replicates < 2:
            raise GeneratorError("need n >= 1 and replicates >= 2")
        return cfg


def load_config(path: str) -> CltConfig:
    """Read a JSON or TOML experiment config."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(raw.decode())
    else:
        data = json.loads(raw)
    return CltConfig.from_dict(data)


@dataclass
class CltReport:
    config: dict
    t_star: Tree
    certificate: dict
    law: LimitLaw
    coordinate_labels: list[str]
    residuals: np.ndarray
    empirical_mean: np.ndarray
    empirical_covariance: np.ndarray
    law_covariance: np.ndarray
    discrepancy: dict
    runtime: dict

    def to_json_dict(self) -> dict:
        law = self.law
        return {
            "config": self.config,
            "t_star": {"newick": to_newick(self.t_star), "edges": {str(s): float(x) for s, x in self.t_star.edges.items()}},
            "certificate": self.certificate,
            "limit_law": {
                "kind": law.kind,
                "case_label": law.case_label,
                "page": law.page,
                "other_page": law.other_page,
                "covariance": law.covariance.tolist(),
                "A": law.A.tolist(),
                "V": law.V.tolist(),
                "excluded_weight": law.excluded_weight,
                "condition_number": law.condition_number,
            },
            "coordinate_labels": self.coordinate_labels,
            "n": self.config["n"],
            "replicates": self.config["replicates"],
            "residuals": self.residuals.tolist(),
            "empirical_mean": self.empirical_mean.tolist(),
            "empirical_covariance": self.empirical_covariance.tolist(),
            "law_covariance": self.law_covariance.tolist(),
            "discrepancy": self.discrepancy,
            "runtime": self.runtime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class _Task:
    generator: Any
    t_star: Tree
    kind: str
    page: str | None
    n: int
    tol: float
    max_iter: int


def _replicate(task: _Task, seed_seq: np.random.SeedSequence):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    trees = task.generator.sample(rng, task.n)
    sample = WeightedSample(tuple(trees))
    cfg = MeanConfig(tol=task.tol, max_iter=task.max_iter, certify=False)
    try:
        res = solve_frechet_mean(sample, cfg, start=task.t_star)
    except ConvergenceError as exc:
        return None, exc.iterations, 0, False
    mean = res.tree
    t_star = task.t_star
    root_n = np.sqrt(task.n)
    if t_star.is_binary:
        coords = _log_jacobian(t_star.masks, t_star.lengths, mean.masks, mean.lengths.tolist(), False)[0]
        return root_n * coords, res.iterations, res.switches, False
    chart = book_chart(t_star)
    v = book_log(chart, mean)
    off = v.page != SPINE
    if task.kind == "spine_gaussian":
        return root_n * v.coords[1:], res.iterations, res.switches, off
    return root_n * fold(chart, v, task.page), res.iterations, res.switches, off


def _run_block(args):
    task, seeds = args
    return [_replicate(task, s) for s in seeds]


def _threads(requested: int | None) -> int:
    cap = os.environ.get("TREESPACE_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def _coordinate_labels(t_star: Tree, law: LimitLaw) -> list[str]:
    if t_star.is_binary:
        return [str(s) for s in t_star.splits]
    spine = [str(s) for s in t_star.splits]
    if law.kind == "spine_gaussian":
        return spine
    chart = book_chart(t_star)
    first = str(chart.page_splits[PAGES.index(law.page)])
    if law.other_page:
        first += " / -" + str(chart.page_splits[PAGES.index(law.other_page)])
    return [first] + spine


def _frob_rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    if denom == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / denom


def run_clt_experiment(config: CltConfig, progress=None) -> CltReport:
    """Run the Monte Carlo check of the predicted limit law."""
    if config.n * config.replicates > config.max_draws:
        raise BudgetExceeded(
            f"n * replicates = {config.n * config.replicates} exceeds the budget of {config.max_draws} draws"
        )
    gen = make_generator(config.generator)
    population = gen.population(config.quadrature_nodes)

    t_star = gen.analytic_mean()
    if t_star is None:
        res = solve_frechet_mean(population, MeanConfig(tol=1e-12, max_iter=config.max_iter))
        t_star = res.tree
    if t_star.codim > 1:
        raise StratumError(f"population mean has codimension {t_star.codim}; only 0 and 1 are supported")
    law = predict_limit(t_star, population)
    if t_star.is_binary:
        c = check_mean_top(t_star, population)
        certificate = {"stratum_codim": 0, "residual": c.residual, "book_integrals": None, "case_label": None}
    else:
        c = check_mean_codim1(t_star, population)
        certificate = {
            "stratum_codim": 1,
            "residual": c.residual,
            "book_integrals": list(c.book_integrals),
            "case_label": c.case_label,
        }

    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.replicates + 1)
    task = _Task(gen, t_star, law.kind, law.page, config.n, config.mean_tol, config.max_iter)
    threads = _threads(config.threads)
    seeds = children[: config.replicates]
    if threads > 1:
        chunk = max(1, len(seeds) // (4 * threads))
        blocks = [(task, seeds[i : i + chunk]) for i in range(0, len(seeds), chunk)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for block in pool.map(_run_block, blocks) for r in block]
    else:
        results = []
        for i, s in enumerate(seeds):
            results.append(_replicate(task, s))
            if progress is not None:
                progress(i + 1, len(seeds))

    rows = np.array([r[0] for r in results if r[0] is not None])
    failed = sum(1 for r in results if r[0] is None)
    iterations = np.array([r[1] for r in results])
    off_spine = float(np.mean([r[3] for r in results if r[0] is not None])) if len(rows) else float("nan")

    draws = law.draw(np.random.Generator(np.random.Philox(children[-1])), config.ks_draws)
    law_cov = law.covariance if law.kind in ("gaussian", "spine_gaussian", "folded_pair") else np.cov(draws, rowvar=False).reshape(law.dimension, law.dimension)
    emp_mean = rows.mean(axis=0) if len(rows) else np.zeros(law.dimension)
    emp_cov = np.cov(rows, rowvar=False).reshape(law.dimension, law.dimension) if len(rows) > 1 else np.zeros_like(law_cov)

    ks = []
    for j in range(law.dimension):
        if len(rows):
            r = stats.ks_2samp(rows[:, j], draws[:, j])
            ks.append({"statistic": float(r.statistic), "pvalue": float(r.pvalue)})
    plain_v = law.V
    discrepancy = {
        "frobenius_vs_prediction": _frob_rel(emp_cov, law_cov),
        "frobenius_vs_V": _frob_rel(emp_cov, plain_v) if plain_v.shape == emp_cov.shape else None,
        "ks": ks,
        "zero_fraction_first": float(np.mean(rows[:, 0] == 0.0)) if len(rows) and law.dimension else None,
        "predicted_zero_fraction_first": float(np.mean(draws[:, 0] == 0.0)) if law.dimension else None,
        "off_spine_fraction": off_spine if not t_star.is_binary else None,
    }
    runtime = {
        "mean_iterations": float(iterations.mean()) if len(iterations) else 0.0,
        "max_iterations": int(iterations.max()) if len(iterations) else 0,
        "total_switches": int(sum(r[2] for r in results)),
        "failed_replicates": int(failed),
        "population_size": len(population),
    }
    return CltReport(
        asdict(config),
        t_star,
        certificate,
        law,
        _coordinate_labels(t_star, law),
        rows,
        emp_mean,
        emp_cov,
        law_cov,
        discrepancy,
        runtime,
    )


def residuals_csv(report: CltReport) -> str:
    header = ",".join(["replicate"] + [f'"{c}"' for c in report.coordinate_labels])
    lines = [header]
    for i, row in enumerate(report.residuals):
        lines.append(",".join([str(i)] + [format(float(x), ".17g") for x in row]))
    return "\n".join(lines) + "\n"


def histogram_csv(report: CltReport, bins: int = 40, seed: int = 0) -> str:
    """Per-coordinate histogram of empirical residuals against the predicted law."""
    draws = report.law.draw(np.random.Generator(np.random.Philox(np.random.SeedSequence(seed))), 100_000)
    lines = ["coordinate,bin_left,bin_right,empirical_density,predicted_density"]
    for j, label in enumerate(report.coordinate_labels):
        col = report.residuals[:, j] if len(report.residuals) else np.zeros(0)
        lo = float(min(col.min() if len(col) else 0.0, np.quantile(draws[:, j], 0.001)))
        hi = float(max(col.max() if len(col) else 0.0, np.quantile(draws[:, j], 0.999)))
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        emp, _ = np.histogram(col, bins=edges, density=len(col) > 0)
        pred, _ = np.histogram(draws[:, j], bins=edges, density=True)
        for k in range(bins):
            lines.append(
                f'"{label}",{edges[k]:.17g},{edges[k + 1]:.17g},{float(emp[k]):.17g},{float(pred[k]):.17g}'
            )
    return "\n".join(lines) + "\n"
