"""Command-line entry point.

    cwla-meta score        --qrels Q --runs DIR --metrics rbp@0.8+erg,err+err --out OUT
    cwla-meta similarity   ... --model rbp@0.8
    cwla-meta consistency  ... --metrics all --inst-t 2.5 --B 1000 --hsd-trials 2000
    cwla-meta discpower    ... --metrics all --inst-t 2.5 --hsd-trials 2000
    cwla-meta synth        --n-runs 39 --n-topics 80 --out DIR

Options may also come from a JSON file (``--config``); flags win over it.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .corpus_io import GainMapping, GainScheme, ParseError, assemble_gains, read_qrels, read_runs, safe_filename
from .engine import (
    AggKind, BrowsingModel, InvalidMetricError, MetricSpec, NumericError, ScoreMatrix,
    STATIC_MODELS, Truncation, parse_metric, score_matrix, grid_specs,
)
from .meta_eval import asl_table, consistency_matrix, consistency_significance, similarity_grid
from . import reports

log = logging.getLogger("cwla_meta")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


@dataclass
class JobConfig:
    command: str
    qrels: str | None = None
    runs: list[str] = field(default_factory=list)
    depth: int = 10
    gain_map: str = "auto"
    max_level: int | None = None
    truncation: str = "stop"
    metrics: list[str] = field(default_factory=lambda: ["all"])
    inst_t: float | None = None
    model: str | None = None
    seed: int = 42
    B: int = 1000
    hsd_trials: int = 2000
    alpha: float = 0.05
    out: str = "out"
    workers: int = 1

    def echo(self) -> dict[str, object]:
        """Settings recorded in every output header (paths as given, no timestamps)."""
        d = asdict(self)
        d.pop("command")
        d.pop("out")
        d.pop("workers")  # output does not depend on it
        return d


# ---------------------------------------------------------------------------
# argument handling


def _split_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values; command-line flags override it")
    common.add_argument("--qrels", help="TREC qrels file (topic iter doc rel)")
    common.add_argument("--runs", nargs="+", help="run directory or run files (TREC 6-column format)")
    common.add_argument("--depth", type=int, help="evaluation cutoff (default 10)")
    common.add_argument("--gain-map", dest="gain_map", choices=["auto", "linear", "exponential"],
                        help="relevance-to-gain mapping; auto = exponential for the ERR model, "
                             "linear otherwise (default auto)")
    common.add_argument("--max-level", dest="max_level", type=int,
                        help="highest relevance level (default: highest in qrels)")
    common.add_argument("--truncation", choices=["stop", "open"], help="tail policy at the cutoff (default stop)")
    common.add_argument("--metrics", type=_split_list,
                        help="comma-separated MODEL[@PARAM]+AGG specs; 'all' expands to all 39 "
                             "model/aggregation cells (needs --inst-t). Default all")
    common.add_argument("--inst-t", dest="inst_t", type=float, help="INST expected gain T used by 'all'")
    common.add_argument("--seed", type=int, help="random seed (default 42)")
    common.add_argument("--B", dest="B", type=int, help="topic-split trials for consistency (default 1000)")
    common.add_argument("--hsd-trials", dest="hsd_trials", type=int,
                        help="randomised Tukey HSD trials (default 2000)")
    common.add_argument("--alpha", type=float, help="significance level (default 0.05)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--workers", type=int, help="threads for randomised trials (default 1)")

    parser = argparse.ArgumentParser(prog="cwla-meta", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("score", parents=[common], help="write one topic-by-run score CSV per metric")
    sim = sub.add_parser("similarity", parents=[common], help="Kendall tau grid between aggregations of a model")
    sim.add_argument("--model", help="browsing model, e.g. rbp@0.8; uses every valid aggregation")
    sub.add_parser("consistency", parents=[common], help="system ranking consistency over topic splits")
    sub.add_parser("discpower", parents=[common], help="ASL tables and curves (discriminative power)")
    syn = sub.add_parser("synth", help="write a synthetic qrels + runs collection")
    syn.add_argument("--n-runs", type=int, default=39)
    syn.add_argument("--n-topics", type=int, default=80)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True)
    return parser


def resolve_config(ns: argparse.Namespace) -> JobConfig:
    flags = {k: v for k, v in vars(ns).items() if k not in ("verbose", "config")}
    values: dict[str, object] = {}
    if getattr(ns, "config", None):
        try:
            with open(ns.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {ns.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config file {ns.config} must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
        unknown = set(values) - set(JobConfig.__dataclass_fields__) - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(values.get("metrics"), str):
            values["metrics"] = _split_list(values["metrics"])
        if isinstance(values.get("runs"), str):
            values["runs"] = [values["runs"]]
    values.update(flags)
    cfg = JobConfig(**values)
    if cfg.depth < 1:
        raise ConfigError("--depth must be >= 1")
    if cfg.B < 1 or cfg.hsd_trials < 1:
        raise ConfigError("--B and --hsd-trials must be >= 1")
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError("--alpha must lie in (0, 1)")
    if cfg.max_level is not None and cfg.max_level < 1:
        raise ConfigError("--max-level must be >= 1")
    if not cfg.qrels or not cfg.runs:
        raise ConfigError("--qrels and --runs are required")
    return cfg


def _model_from_text(text: str) -> BrowsingModel:
    try:
        return parse_metric(f"{text}+erg").model
    except InvalidMetricError as exc:
        raise ConfigError(f"bad --model {text!r}: {exc}") from exc


def resolve_metrics(cfg: JobConfig) -> list[MetricSpec]:
    scheme = None if cfg.gain_map == "auto" else GainScheme(cfg.gain_map)
    truncation = Truncation(cfg.truncation)
    tokens = list(cfg.metrics)
    if cfg.command == "similarity" and cfg.model and cfg.metrics == ["all"]:
        model = _model_from_text(cfg.model)
        tokens = [f"{model.label}+{k.value}" for k in AggKind
                  if not (k is AggKind.ERR and model.kind in STATIC_MODELS)]

    specs: list[MetricSpec] = []
    for token in tokens:
        if token.lower() == "all":
            if cfg.inst_t is None:
                raise ConfigError("'all' includes INST, whose T has no default; pass --inst-t (e.g. 2.25 or 2.5)")
            for s in grid_specs(cfg.inst_t, depth=cfg.depth, truncation=truncation):
                specs.append(s if scheme is None else MetricSpec(s.model, s.agg, s.depth, s.truncation, scheme))
            continue
        try:
            specs.append(parse_metric(token, cfg.depth, truncation, scheme))
        except InvalidMetricError as exc:
            raise ConfigError(str(exc)) from exc
    if not specs:
        raise ConfigError("no metrics given")
    if cfg.command == "similarity" and cfg.model:
        model = _model_from_text(cfg.model)
        specs = [s for s in specs if s.model == model]
    return specs


def _unique_names(specs: Sequence[MetricSpec]) -> list[str]:
    seen: Counter[str] = Counter()
    names = []
    for s in specs:
        seen[s.name] += 1
        names.append(s.name if seen[s.name] == 1 else f"{s.name}#{seen[s.name]}")
    return names


# ---------------------------------------------------------------------------
# pipeline


def build_score_matrices(cfg: JobConfig, specs: Sequence[MetricSpec]) -> dict[str, ScoreMatrix]:
    try:
        qrels = read_qrels(cfg.qrels, cfg.max_level)
        runs = read_runs(cfg.runs)
    except OSError as exc:
        raise ParseError(str(exc)) from exc
    if len(runs) == 0:
        raise ParseError("no run files found", ", ".join(cfg.runs))
    max_level = qrels.require_max_level()
    gains = {}
    for scheme in {s.gain_scheme for s in specs}:
        gains[scheme] = assemble_gains(runs, qrels, GainMapping(scheme, max_level), cfg.depth)
    for t in next(iter(gains.values())).unjudged_topics:
        log.warning("topic %s has no judgments; scored as all-zero", t)
    out = {}
    for name, spec in zip(_unique_names(specs), specs):
        m = score_matrix(gains[spec.gain_scheme], spec)
        out[name] = ScoreMatrix(m.topic_ids, m.run_ids, m.values, name)
    return out


def _header(cfg: JobConfig, specs: Sequence[MetricSpec]) -> list[str]:
    echo = cfg.echo()
    echo["metrics"] = [s.name for s in specs]
    echo["gain_schemes"] = sorted({s.gain_scheme.value for s in specs})
    return reports.provenance(cfg.command, echo)


def _by_model(names: Sequence[str], specs: Sequence[MetricSpec]) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for name, spec in zip(names, specs):
        groups.setdefault(spec.model.label, []).append(name)
    return groups


def cmd_score(cfg: JobConfig) -> list[Path]:
    specs = resolve_metrics(cfg)
    matrices = build_score_matrices(cfg, specs)
    header = _header(cfg, specs)
    out = Path(cfg.out)
    written = []
    for name, matrix in matrices.items():
        path = out / f"scores_{safe_filename(name)}.csv"
        reports.write_score_matrix(path, matrix, header)
        written.append(path)
    return written


def cmd_similarity(cfg: JobConfig) -> list[Path]:
    specs = resolve_metrics(cfg)
    matrices = build_score_matrices(cfg, specs)
    header = _header(cfg, specs)
    groups = {m: names for m, names in _by_model(list(matrices), specs).items() if len(names) >= 2}
    if not groups:
        raise ConfigError("similarity needs at least two aggregations of the same browsing model")
    written = []
    for model, names in groups.items():
        grid = similarity_grid({n: matrices[n] for n in names})
        path = Path(cfg.out) / f"similarity_{safe_filename(model)}.csv"
        reports.write_similarity(path, grid, header)
        written.append(path)
    return written


def cmd_consistency(cfg: JobConfig) -> list[Path]:
    specs = resolve_metrics(cfg)
    matrices = build_score_matrices(cfg, specs)
    names = list(matrices)
    header = _header(cfg, specs)
    cm = consistency_matrix(matrices, cfg.B, cfg.seed, cfg.workers)
    groups = {}
    for model, members in _by_model(names, specs).items():
        if cm.B < 2:
            raise ConfigError("consistency significance needs --B >= 2")
        groups[model] = consistency_significance(cm, cfg.hsd_trials, cfg.seed, cfg.alpha, members, cfg.workers)
    out = Path(cfg.out)
    summary, raw = out / "consistency_summary.csv", out / "consistency_tau.csv"
    reports.write_consistency_summary(summary, groups, dict(zip(names, specs)), header)
    reports.write_consistency_raw(raw, cm, header)
    return [summary, raw]


def cmd_discpower(cfg: JobConfig) -> list[Path]:
    specs = resolve_metrics(cfg)
    matrices = build_score_matrices(cfg, specs)
    names = list(matrices)
    if len(next(iter(matrices.values())).run_ids) < 2:
        raise ParseError("discriminative power needs at least 2 runs", ", ".join(cfg.runs))
    header = _header(cfg, specs)
    out = Path(cfg.out)
    tables = {n: asl_table(matrices[n], cfg.hsd_trials, cfg.seed, cfg.workers) for n in names}
    written = []
    for name, table in tables.items():
        stem = safe_filename(name)
        reports.write_asl_table(out / "asl" / f"asl_{stem}.csv", table, header)
        reports.write_asl_curve(out / "asl" / f"curve_{stem}.csv", table, header)
        written += [out / "asl" / f"asl_{stem}.csv", out / "asl" / f"curve_{stem}.csv"]
    by_name = dict(zip(names, specs))
    reports.write_asl_curves(out / "asl_curves.csv", tables, by_name, header)
    reports.write_discpower_summary(out / "discpower_summary.csv", tables, by_name, cfg.alpha, header)
    return written + [out / "asl_curves.csv", out / "discpower_summary.csv"]


def cmd_synth(ns: argparse.Namespace) -> list[Path]:
    from .synthetic import synthetic_collection, write_collection

    qrels, runs = synthetic_collection(ns.n_runs, ns.n_topics, seed=ns.seed)
    return list(write_collection(ns.out, qrels, runs))


COMMANDS = {
    "score": cmd_score,
    "similarity": cmd_similarity,
    "consistency": cmd_consistency,
    "discpower": cmd_discpower,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if ns.command == "synth":
            written = cmd_synth(ns)
        else:
            cfg = resolve_config(ns)
            written = COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"cwla-meta: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"cwla-meta: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, OSError, ValueError) as exc:
        print(f"cwla-meta: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
