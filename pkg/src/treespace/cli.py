"""Command-line interface: ``treespace {distance,logmap,mean,clt}``.

Exit codes: 0 ok, 2 parse/config error, 3 leaf-set mismatch, 4 unsupported
stratum, 5 non-convergence, 6 budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clt import BudgetExceeded, CltError, GeneratorError, histogram_csv, load_config, residuals_csv, run_clt_experiment
from .frechet import ConvergenceError, MeanConfig, WeightedSample, solve_frechet_mean
from .geodesics import carrier_number, compute_support, distance, is_singular, on_cell_boundary
from .logmap import SPINE, book_chart, book_log, chart_derivative, log_map
from .trees import (
    CanonicalOrder,
    LeafSetMismatch,
    NewickError,
    StratumError,
    Tree,
    TreeError,
    parse_newick_many,
    read_csv,
    to_newick,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_LEAFSET = 3
EXIT_STRATUM = 4
EXIT_CONVERGENCE = 5
EXIT_BUDGET = 6


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    subcommand: str
    inputs: list[str] = field(default_factory=list)
    output: str | None = None
    format: str | None = None
    tol: float | None = None
    seed: int | None = None
    config: str | None = None
    root: str | None = None

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "CliConfig":
        cfg = cls(ns.command, ns.input or [], ns.output, ns.format, ns.tol, ns.seed, ns.config, ns.root)
        for p in cfg.inputs:
            if p != "-" and not os.path.exists(p):
                raise UsageError(f"input not found: {p}")
        if cfg.config is not None and not os.path.exists(cfg.config):
            raise UsageError(f"config not found: {cfg.config}")
        return cfg


# --------------------------------------------------------------------------- #
# I/O helpers                                                                 #
# --------------------------------------------------------------------------- #


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def _format_of(path: str, forced: str | None) -> str:
    if forced:
        return forced
    return "csv" if path.endswith(".csv") else "newick"


def read_trees(cfg: CliConfig) -> tuple[list[Tree], list[float] | None]:
    """All trees from all inputs, in order, with CSV weights when every input has them."""
    trees: list[Tree] = []
    weights: list[float] = []
    all_weighted = True
    for path in cfg.inputs:
        text = _read_text(path)
        if _format_of(path, cfg.format) == "csv":
            ts, ws = read_csv(text, cfg.root or "root")
        else:
            ts, ws = parse_newick_many(text, cfg.root), None
        if ws is None:
            all_weighted = False
        else:
            weights.extend(ws)
        trees.extend(ts)
    if not trees:
        raise UsageError("no trees in the input")
    for t in trees[1:]:
        trees[0].same_leafset(t)
    return trees, (weights if all_weighted and weights else None)


def _emit(cfg: CliConfig, text: str) -> None:
    if cfg.output and cfg.output != "-":
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _edges(tree: Tree) -> dict[str, float]:
    return {str(s): float(x) for s, x in tree.edges.items()}


# --------------------------------------------------------------------------- #
# Commands                                                                    #
# --------------------------------------------------------------------------- #


def cmd_distance(cfg: CliConfig) -> int:
    trees, _ = read_trees(cfg)
    if len(trees) != 2:
        raise UsageError(f"distance needs exactly two trees, got {len(trees)}")
    a, b = trees
    sup = compute_support(a, b)
    dist = distance(a, b)
    out = {
        "distance": dist,
        "carrier_number": carrier_number(a, b),
        "support": {
            "common": {str(s): [x, y] for s, (x, y) in sup.common.items()},
            "pairs": [
                {"A": [str(s) for s in pa], "B": [str(s) for s in pb], "a_norm": an, "b_norm": bn, "ratio": an / bn}
                for (pa, pb), an, bn in zip(sup.pairs, sup.a_norms, sup.b_norms)
            ],
            "tight": sup.tight,
        },
    }
    _emit(cfg, _dump(out))
    return EXIT_OK


def cmd_logmap(cfg: CliConfig) -> int:
    trees, _ = read_trees(cfg)
    base, targets = trees[0], trees[1:]
    if base.codim > 1:
        raise StratumError(f"log map base has codimension {base.codim}; only 0 and 1 are supported")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if base.is_binary:
        w.writerow(["target"] + [str(s) for s in base.splits] + ["page", "singular", "boundary"])
        for i, t in enumerate(targets):
            v = log_map(base, t)
            w.writerow(
                [i]
                + [_g(x) for x in v.coords]
                + ["", str(is_singular(base, t)).lower(), str(on_cell_boundary(base, t)).lower()]
            )
    else:
        chart = book_chart(base)
        w.writerow(["target", "off_spine"] + [str(s) for s in base.splits] + ["page", "singular", "boundary"])
        for i, t in enumerate(targets):
            v = book_log(chart, t)
            _, boundary = chart_derivative(chart, t, 0 if v.page == SPINE else v.page)
            w.writerow([i] + [_g(x) for x in v.coords] + [v.page, "", str(boundary).lower()])
    _emit(cfg, buf.getvalue())
    return EXIT_OK


def _certificate_json(cert) -> dict | None:
    if cert is None:
        return None
    return {
        "stratum_codim": cert.stratum_codim,
        "residual": None if np.isnan(cert.residual) else cert.residual,
        "is_mean": cert.is_mean,
        "book_integrals": list(cert.book_integrals) if cert.book_integrals is not None else None,
        "case_label": cert.case_label,
        "note": cert.note,
    }


def cmd_mean(cfg: CliConfig) -> int:
    trees, weights = read_trees(cfg)
    sample = WeightedSample.normalized(trees, weights) if weights is not None else WeightedSample(tuple(trees))
    mcfg = MeanConfig(tol=cfg.tol if cfg.tol is not None else 1e-8, seed=cfg.seed or 0)
    try:
        res = solve_frechet_mean(sample, mcfg)
    except ConvergenceError as exc:
        sys.stdout.write(
            _dump({"converged": False, "last": to_newick(exc.last), "residual": None if np.isnan(exc.residual) else exc.residual, "iterations": exc.iterations})
        )
        raise
    order = CanonicalOrder(res.tree.leafset)
    out = {
        "converged": True,
        "newick": to_newick(res.tree),
        "coordinates": {str(s): float(x) for s, x in zip(order.all_splits, order.vector(res.tree))},
        "edges": _edges(res.tree),
        "certificate": _certificate_json(res.certificate),
        "iterations": res.iterations,
        "switches": res.switches,
    }
    _emit(cfg, _dump(out))
    return EXIT_OK


def _matrix_rows(name: str, mat: np.ndarray) -> list[str]:
    return [f"  {name}[{i}]  " + "  ".join(f"{x: .6g}" for x in row) for i, row in enumerate(np.atleast_2d(mat))]


def cmd_clt(cfg: CliConfig) -> int:
    if cfg.config is None:
        raise UsageError("clt needs --config")
    try:
        conf = load_config(cfg.config)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    if cfg.seed is not None:
        conf.seed = cfg.seed
    if cfg.tol is not None:
        conf.mean_tol = cfg.tol
    report = run_clt_experiment(conf)

    outputs = dict(conf.outputs)
    if cfg.output:
        stem = cfg.output[:-5] if cfg.output.endswith(".json") else cfg.output
        outputs.setdefault("report", stem + ".json")
        outputs.setdefault("residuals", stem + "_residuals.csv")
        outputs.setdefault("histogram", stem + "_histogram.csv")
    for path in outputs.values():
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    if "report" in outputs:
        Path(outputs["report"]).write_text(report.to_json() + "\n")
    if "residuals" in outputs:
        Path(outputs["residuals"]).write_text(residuals_csv(report))
    if "histogram" in outputs:
        Path(outputs["histogram"]).write_text(histogram_csv(report, conf.histogram_bins, conf.seed))

    law = report.law
    lines = [
        f"T* = {to_newick(report.t_star)}",
        f"law: {law.kind}" + (f" (case {law.case_label})" if law.case_label else "") + (f", page {law.page}" if law.page else ""),
        f"n = {conf.n}, replicates = {conf.replicates}, failed = {report.runtime['failed_replicates']}",
        "coordinates: " + ", ".join(report.coordinate_labels),
        "predicted covariance:",
        *_matrix_rows("P", report.law_covariance),
        "empirical covariance:",
        *_matrix_rows("E", report.empirical_covariance),
        f"frobenius rel. error vs prediction: {report.discrepancy['frobenius_vs_prediction']:.6g}",
    ]
    if report.discrepancy["frobenius_vs_V"] is not None:
        lines.append(f"frobenius rel. error vs V:          {report.discrepancy['frobenius_vs_V']:.6g}")
    for label, ks in zip(report.coordinate_labels, report.discrepancy["ks"]):
        lines.append(f"KS {label}: {ks['statistic']:.6g} (p = {ks['pvalue']:.3g})")
    if report.discrepancy["off_spine_fraction"] is not None:
        lines.append(f"off-spine fraction: {report.discrepancy['off_spine_fraction']:.6g}")
    if law.kind == "half_line_gaussian":
        lines.append(
            f"zero fraction (first coordinate): {report.discrepancy['zero_fraction_first']:.6g}"
            f" vs predicted {report.discrepancy['predicted_zero_fraction_first']:.6g}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"distance": cmd_distance, "logmap": cmd_logmap, "mean": cmd_mean, "clt": cmd_clt}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treespace", description="Geodesics, log maps, means and limit laws in tree space.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "distance": "geodesic distance and support between two trees",
        "logmap": "log images of targets at a base tree (first tree read)",
        "mean": "Fréchet mean of a sample with its optimality certificate",
        "clt": "Monte Carlo check of the limit law of sample means",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("-i", "--input", action="append", help="input file (repeatable, '-' for stdin)")
        sp.add_argument("-o", "--output", help="output path (stdout by default)")
        sp.add_argument("--format", choices=("newick", "csv"), help="input format (default: by extension)")
        sp.add_argument("--tol", type=float, help="solver tolerance")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--config", help="experiment config (JSON or TOML)")
        sp.add_argument("--root", help="root label for Newick/CSV input")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    try:
        cfg = CliConfig.from_args(ns)
        if ns.command != "clt" and not cfg.inputs:
            raise UsageError(f"{ns.command} needs at least one --input")
        return COMMANDS[ns.command](cfg)
    except LeafSetMismatch as exc:
        return _fail(exc, EXIT_LEAFSET)
    except StratumError as exc:
        return _fail(exc, EXIT_STRATUM)
    except NewickError as exc:
        return _fail(exc, EXIT_PARSE)
    except BudgetExceeded as exc:
        return _fail(exc, EXIT_BUDGET)
    except (ConvergenceError, CltError) as exc:
        return _fail(exc, EXIT_CONVERGENCE)
    except (TreeError, UsageError, GeneratorError, json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        return _fail(exc, EXIT_PARSE)
    except ValueError as exc:
        # TOML decode errors and malformed numbers in configs
        return _fail(exc, EXIT_PARSE)


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(f"treespace: error: {exc}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
