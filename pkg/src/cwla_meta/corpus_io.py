"""Reading TREC qrels and run files and turning them into per-topic gain vectors.

Conventions (trec_eval style):

- a run's ranking is rebuilt from its scores: descending score, ties broken by
  ascending doc-id; the rank column is ignored;
- unjudged documents have gain 0;
- ranked lists shorter than the evaluation depth are padded with zeros.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed qrels or run input. Carries the source name and 1-based line number."""

    def __init__(self, message: str, source: str = "<input>", line: int | None = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def topic_sort_key(topic_id: str):
    """Numeric topic ids sort numerically (``2`` before ``10``), everything else lexically."""
    return (0, int(topic_id), topic_id) if topic_id.isdigit() else (1, 0, topic_id)


# ---------------------------------------------------------------------------
# qrels


@dataclass(frozen=True)
class Qrels:
    entries: Mapping[tuple[str, str], int]
    max_level: int | None = None

    def __post_init__(self):
        if self.max_level is not None and self.max_level < 1:
            raise ValueError(f"max_level must be >= 1, got {self.max_level}")
        for key, level in self.entries.items():
            if level < 0:
                raise ValueError(f"negative relevance level {level} for {key}")
            if self.max_level is not None and level > self.max_level:
                raise ValueError(f"relevance level {level} for {key} exceeds max_level={self.max_level}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def topic_ids(self) -> frozenset[str]:
        return frozenset(t for t, _ in self.entries)

    def level(self, topic_id: str, doc_id: str) -> int:
        return self.entries.get((topic_id, doc_id), 0)

    def with_max_level(self, max_level: int) -> Qrels:
        return Qrels(self.entries, max_level)

    def require_max_level(self) -> int:
        if self.max_level is None:
            raise ValueError("qrels are empty; an explicit max_level is required")
        return self.max_level


def _lines(stream: Iterable[str] | str) -> Iterable[str]:
    if isinstance(stream, str):
        return stream.splitlines()
    return stream


def parse_qrels(stream: Iterable[str] | str, max_level: int | None = None, source: str = "<qrels>") -> Qrels:
    """Parse ``topic iter doc rel`` lines. Duplicate (topic, doc) pairs: the last line wins.

    ``max_level`` defaults to the largest level observed; when given it must
    bound every level in the file.
    """
    entries: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(_lines(stream), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields (topic iter doc rel), got {len(fields)}", source, lineno)
        topic, _, doc, rel = fields
        try:
            level = int(rel)
        except ValueError:
            raise ParseError(f"relevance level {rel!r} is not an integer", source, lineno) from None
        if level < 0:
            raise ParseError(f"negative relevance level {level}", source, lineno)
        entries[(topic, doc)] = level

    observed = max(entries.values(), default=None)
    if max_level is None:
        # all-zero judgments still need a positive scale
        max_level = None if observed is None else max(observed, 1)
    elif observed is not None and observed > max_level:
        raise ParseError(f"observed relevance level {observed} exceeds max_level={max_level}", source)
    return Qrels(entries, max_level)


def read_qrels(path: str | os.PathLike, max_level: int | None = None) -> Qrels:
    with open(path, encoding="utf-8") as fh:
        return parse_qrels(fh, max_level=max_level, source=str(path))


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class Run:
    run_id: str
    topics: Mapping[str, tuple[str, ...]]


def parse_run(stream: Iterable[str] | str, run_id: str | None = None, source: str = "<run>") -> Run:
    """Parse a 6-column TREC run (``topic Q0 doc rank score tag``).

    The run id is the tag column unless ``run_id`` is given; a file mixing
    tags is rejected in that case.
    """
    scored: dict[str, list[tuple[float, str]]] = {}
    seen: set[tuple[str, str]] = set()
    tags: set[str] = set()
    for lineno, raw in enumerate(_lines(stream), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields (topic Q0 doc rank score tag), got {len(fields)}", source, lineno)
        topic, _, doc, _, score_text, tag = fields
        try:
            score = float(score_text)
        except ValueError:
            raise ParseError(f"score {score_text!r} is not numeric", source, lineno) from None
        if not math.isfinite(score):
            raise ParseError(f"score {score_text!r} is not finite", source, lineno)
        if (topic, doc) in seen:
            raise ParseError(f"duplicate document {doc!r} for topic {topic!r}", source, lineno)
        seen.add((topic, doc))
        tags.add(tag)
        scored.setdefault(topic, []).append((score, doc))

    if run_id is None:
        if len(tags) > 1:
            raise ParseError(f"run mixes several tags {sorted(tags)}; pass an explicit run id", source)
        if not tags:
            raise ParseError("empty run has no tag; pass an explicit run id", source)
        run_id = tags.pop()

    topics = {
        topic: tuple(doc for _, doc in sorted(rows, key=lambda sd: (-sd[0], sd[1])))
        for topic, rows in scored.items()
    }
    return Run(run_id, topics)


def read_run(path: str | os.PathLike, run_id: str | None = None) -> Run:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if run_id is None and not any(line.strip() for line in lines):
        run_id = path.stem
    return parse_run(lines, run_id=run_id, source=str(path))


@dataclass(frozen=True)
class RunSet:
    runs: tuple[Run, ...]
    topic_ids: tuple[str, ...]

    def __post_init__(self):
        ids = [r.run_id for r in self.runs]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate run ids: {dupes}")

    @classmethod
    def from_runs(cls, runs: Iterable[Run], topic_ids: Sequence[str] | None = None) -> RunSet:
        runs = tuple(runs)
        if topic_ids is None:
            topics = {t for r in runs for t in r.topics}
            topic_ids = sorted(topics, key=topic_sort_key)
        return cls(runs, tuple(topic_ids))

    @property
    def run_ids(self) -> tuple[str, ...]:
        return tuple(r.run_id for r in self.runs)

    def __len__(self) -> int:
        return len(self.runs)


def expand_run_paths(paths: Sequence[str | os.PathLike]) -> list[Path]:
    """A single directory expands to its (non-hidden) files in name order."""
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(c for c in p.iterdir() if c.is_file() and not c.name.startswith(".")))
        else:
            out.append(p)
    return out


def read_runs(paths: Sequence[str | os.PathLike]) -> RunSet:
    return RunSet.from_runs(read_run(p) for p in expand_run_paths(paths))


# ---------------------------------------------------------------------------
# gains


class GainScheme(str, enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class GainMapping:
    scheme: GainScheme
    max_level: int

    def __post_init__(self):
        object.__setattr__(self, "scheme", GainScheme(self.scheme))
        if self.max_level < 1:
            raise ValueError(f"max_level must be >= 1, got {self.max_level}")

    def __call__(self, level: int) -> float:
        return map_gain(level, self)


def map_gain(level: int, mapping: GainMapping) -> float:
    """Linear: ``x / x_max``. Exponential: ``(2**x - 1) / 2**x_max`` (never reaches 1)."""
    if level < 0 or level > mapping.max_level:
        raise ValueError(f"relevance level {level} outside [0, {mapping.max_level}]")
    if mapping.scheme is GainScheme.LINEAR:
        return level / mapping.max_level
    return (2.0**level - 1.0) / 2.0**mapping.max_level


@dataclass(frozen=True)
class GainVector:
    gains: np.ndarray

    def __post_init__(self):
        g = np.array(self.gains, dtype=np.float64)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("a gain vector is a non-empty 1-d sequence")
        if not np.all((g >= 0.0) & (g <= 1.0)):
            raise ValueError("gains must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def depth(self) -> int:
        return self.gains.size

    def __len__(self) -> int:
        return self.gains.size


@dataclass(frozen=True)
class AssembledGains:
    """Gain vectors for every (run, topic) cell, stored as a ``(K, T, depth)`` array."""

    run_ids: tuple[str, ...]
    topic_ids: tuple[str, ...]
    depth: int
    array: np.ndarray
    mapping: GainMapping
    unjudged_topics: tuple[str, ...] = field(default=())

    def __getitem__(self, key: tuple[str, str]) -> GainVector:
        run_id, topic_id = key
        return GainVector(self.array[self.run_ids.index(run_id), self.topic_ids.index(topic_id)])

    def vectors(self) -> dict[tuple[str, str], GainVector]:
        return {
            (r, t): GainVector(self.array[i, j])
            for i, r in enumerate(self.run_ids)
            for j, t in enumerate(self.topic_ids)
        }


def assemble_gains(runs: RunSet, qrels: Qrels, mapping: GainMapping, depth: int = 10) -> AssembledGains:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if qrels.max_level is not None and qrels.max_level > mapping.max_level:
        raise ValueError(f"qrels max_level {qrels.max_level} exceeds the mapping's {mapping.max_level}")
    lookup = [map_gain(x, mapping) for x in range(mapping.max_level + 1)]

    judged = qrels.topic_ids
    unjudged = tuple(t for t in runs.topic_ids if t not in judged)
    for t in unjudged:
        log.warning("topic %s appears in runs but has no judgments; its gains are all zero", t)

    out = np.zeros((len(runs), len(runs.topic_ids), depth))
    for i, run in enumerate(runs.runs):
        for j, topic in enumerate(runs.topic_ids):
            docs = run.topics.get(topic, ())[:depth]
            for rank, doc in enumerate(docs):
                out[i, j, rank] = lookup[qrels.level(topic, doc)]
    out.setflags(write=False)
    return AssembledGains(runs.run_ids, runs.topic_ids, depth, out, mapping, unjudged)


_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


def safe_filename(name: str) -> str:
    return _SAFE.sub("_", name).strip("_") or "unnamed"
