"""CSV writers for score matrices and meta-evaluation results.

Every file starts with ``#`` comment lines echoing the job configuration, is
UTF-8 with LF line endings, and prints reals with 10 significant digits, so
identical inputs and configuration give byte-identical files.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .engine import MetricSpec, ScoreMatrix
from .meta_eval import AslTable, ConsistencyMatrix, ConsistencyRow, SimilarityGrid, asl_curve, discriminative_power


def fmt(x: float) -> str:
    return f"{x:.10g}"


def provenance(command: str, config: Mapping[str, object]) -> list[str]:
    lines = [f"cwla-meta {command}"]
    lines += [f"{key}={_echo(value)}" for key, value in config.items()]
    return lines


def _echo(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(map(str, value))
    return str(value)


def _open(path: str | os.PathLike):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def _write(path: str | os.PathLike, header: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with _open(path) as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_score_matrix(path, matrix: ScoreMatrix, header: Sequence[str] = ()) -> None:
    with _open(path) as fh:
        matrix.write_csv(fh, header)


def write_similarity(path, grid: SimilarityGrid, header: Sequence[str] = ()) -> None:
    rows = []
    for a, la in enumerate(grid.labels):
        for b, lb in enumerate(grid.labels):
            rows.append([la, lb, fmt(grid.tau[a, b]), fmt(grid.low[a, b]), fmt(grid.high[a, b])])
    header = [*header, f"runs={grid.n_runs}", f"tied_rankings={','.join(grid.tied) or 'none'}"]
    _write(path, header, ["metric_a", "metric_b", "tau", "ci_low", "ci_high"], rows)


def write_consistency_raw(path, cm: ConsistencyMatrix, header: Sequence[str] = ()) -> None:
    rows = ([b + 1, *map(fmt, row)] for b, row in enumerate(cm.values))
    _write(path, header, ["trial", *cm.metric_ids], rows)


def write_consistency_summary(
    path,
    groups: Mapping[str, list[ConsistencyRow]],
    specs: Mapping[str, MetricSpec],
    header: Sequence[str] = (),
) -> None:
    """One block per comparison family, best mean tau first, mirroring a per-model results table."""
    rows = []
    for group, members in groups.items():
        for rank, row in enumerate(members, start=1):
            spec = specs[row.metric]
            rows.append([
                group, rank, row.metric, spec.agg.label, "*" if spec.canonical else "",
                f"{row.mean_tau:.3f}", fmt(row.mean_tau), row.outperforms, row.ties,
            ])
    columns = ["model", "rank", "metric", "aggregation", "canonical", "mean_tau_3dp", "mean_tau",
               "outperforms", "tie_trials"]
    _write(path, header, columns, rows)


def write_asl_table(path, table: AslTable, header: Sequence[str] = ()) -> None:
    rows = ([p.run_a, p.run_b, fmt(p.diff), fmt(p.asl)] for p in table.pairs)
    _write(path, header, ["run_a", "run_b", "diff", "asl"], rows)


def write_asl_curve(path, table: AslTable, header: Sequence[str] = ()) -> None:
    rows = ([x, fmt(y)] for x, y in asl_curve(table))
    _write(path, header, ["pair_index", "asl"], rows)


def write_asl_curves(path, tables: Mapping[str, AslTable], specs: Mapping[str, MetricSpec],
                     header: Sequence[str] = ()) -> None:
    """All curves in long form (model, metric, pair index, ASL), ready for a plotting tool."""
    rows = []
    for name, table in tables.items():
        spec = specs[name]
        for x, y in asl_curve(table):
            rows.append([spec.model.label, name, spec.agg.label, "*" if spec.canonical else "", x, fmt(y)])
    _write(path, header, ["model", "metric", "aggregation", "canonical", "pair_index", "asl"], rows)


def write_discpower_summary(path, tables: Mapping[str, AslTable], specs: Mapping[str, MetricSpec],
                            alpha: float, header: Sequence[str] = ()) -> None:
    rows = []
    for name, table in tables.items():
        spec = specs[name]
        rows.append([
            spec.model.label, name, spec.agg.label, "*" if spec.canonical else "",
            len(table.pairs), sum(p.asl < alpha for p in table.pairs), fmt(discriminative_power(table, alpha)),
        ])
    _write(path, header, ["model", "metric", "aggregation", "canonical", "pairs", "significant",
                          "discriminative_power"], rows)
