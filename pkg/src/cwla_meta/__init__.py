"""C/W/L/A offline evaluation metrics and their meta-evaluation."""

from .corpus_io import (
    AssembledGains, GainMapping, GainScheme, GainVector, ParseError, Qrels, Run, RunSet,
    assemble_gains, map_gain, parse_qrels, parse_run, read_qrels, read_runs,
)
from .engine import (
    AggKind, Aggregation, BrowsingModel, InvalidMetricError, MetricSpec, ModelKind, NumericError,
    ScoreMatrix, Truncation, aggregate, continuation, last_probabilities, parse_metric, score,
    score_matrix, grid_specs, v_plus, weights,
)
from .meta_eval import (
    AslTable, ConsistencyMatrix, RunRanking, asl_curve, asl_table, consistency_matrix,
    consistency_significance, consistency_trials, discriminative_power, kendall_tau, mean_scores,
    randomized_tukey_hsd, rank_runs, similarity_grid, tau_ci,
)

__version__ = "0.1.0"

__all__ = [
    "AggKind", "Aggregation", "AslTable", "AssembledGains", "BrowsingModel", "ConsistencyMatrix",
    "GainMapping", "GainScheme", "GainVector", "InvalidMetricError", "MetricSpec", "ModelKind",
    "NumericError", "ParseError", "Qrels", "Run", "RunRanking", "RunSet", "ScoreMatrix", "Truncation",
    "aggregate", "asl_curve", "asl_table", "assemble_gains", "consistency_matrix",
    "consistency_significance", "consistency_trials", "continuation", "discriminative_power",
    "kendall_tau", "last_probabilities", "map_gain", "mean_scores", "parse_metric", "parse_qrels",
    "parse_run", "randomized_tukey_hsd", "rank_runs", "read_qrels", "read_runs", "score",
    "score_matrix", "similarity_grid", "grid_specs", "tau_ci", "v_plus", "weights",
]
