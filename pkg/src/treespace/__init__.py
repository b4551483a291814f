"""Geodesics, log maps, Fréchet means and their limit laws in the space of rooted phylogenetic trees."""

__version__ = "0.1.0"

from .trees import (
    LeafSet,
    LeafSetMismatch,
    NewickError,
    Split,
    StratumError,
    Tree,
    TreeError,
    count_edge_types,
    enumerate_binary_topologies,
    parse_newick,
    parse_newick_many,
    read_csv,
    to_newick,
    write_csv,
)
from .geodesics import Geodesic, Support, carrier_number, compute_support, distance, geodesic, geodesic_point, is_singular
from .logmap import TangentVector, book_chart, book_log, derivative_matrix, fold, log_map, phi
from .frechet import MeanCertificate, MeanConfig, WeightedSample, check_mean_codim1, check_mean_top, frechet_mean, solve_frechet_mean
from .clt import CltConfig, CltReport, LimitLaw, estimate_A, estimate_V, predict_limit, run_clt_experiment

__all__ = [
    "LeafSet", "LeafSetMismatch", "NewickError", "Split", "StratumError", "Tree", "TreeError",
    "count_edge_types", "enumerate_binary_topologies", "parse_newick", "parse_newick_many",
    "read_csv", "to_newick", "write_csv",
    "Geodesic", "Support", "carrier_number", "compute_support", "distance", "geodesic", "geodesic_point", "is_singular",
    "TangentVector", "book_chart", "book_log", "derivative_matrix", "fold", "log_map", "phi",
    "MeanCertificate", "MeanConfig", "WeightedSample", "check_mean_codim1", "check_mean_top",
    "frechet_mean", "solve_frechet_mean",
    "CltConfig", "CltReport", "LimitLaw", "estimate_A", "estimate_V", "predict_limit", "run_clt_experiment",
]
