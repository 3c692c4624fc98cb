"""Synthetic test collections for demos and desk-scale checks.

Runs differ in a latent quality: each run scores a document as
``quality * level + noise`` and returns its top ``run_length`` documents, so
better runs retrieve more relevant documents higher, but not deterministically.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .corpus_io import Qrels, Run, RunSet


def synthetic_collection(
    n_runs: int = 39,
    n_topics: int = 80,
    docs_per_topic: int = 150,
    run_length: int = 50,
    max_level: int = 3,
    seed: int = 0,
) -> tuple[Qrels, RunSet]:
    rng = np.random.default_rng(seed)
    level_probs = np.array([0.55, 0.25, 0.12, 0.08])[: max_level + 1]
    level_probs = level_probs / level_probs.sum()
    quality = rng.uniform(0.1, 1.5, size=n_runs)

    topics = [f"{t + 1:04d}" for t in range(n_topics)]
    entries: dict[tuple[str, str], int] = {}
    ranked: list[dict[str, tuple[str, ...]]] = [{} for _ in range(n_runs)]
    for topic in topics:
        levels = rng.choice(max_level + 1, size=docs_per_topic, p=level_probs)
        docs = [f"doc-{topic}-{d:04d}" for d in range(docs_per_topic)]
        for doc, level in zip(docs, levels):
            entries[(topic, doc)] = int(level)
        for k in range(n_runs):
            # topic-specific skill keeps runs from being perfectly ordered
            skill = quality[k] * rng.uniform(0.5, 1.5)
            scores = skill * levels + rng.normal(size=docs_per_topic)
            order = np.argsort(-scores, kind="stable")[:run_length]
            ranked[k][topic] = tuple(docs[i] for i in order)

    runs = tuple(Run(f"run{k + 1:02d}", ranked[k]) for k in range(n_runs))
    return Qrels(entries, max_level), RunSet(runs, tuple(topics))


def write_qrels(path: str | os.PathLike, qrels: Qrels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for (topic, doc), level in qrels.entries.items():
            fh.write(f"{topic} 0 {doc} {level}\n")


def write_run(path: str | os.PathLike, run: Run) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for topic, docs in run.topics.items():
            n = len(docs)
            for rank, doc in enumerate(docs, start=1):
                fh.write(f"{topic} Q0 {doc} {rank} {n - rank + 1} {run.run_id}\n")


def write_collection(directory: str | os.PathLike, qrels: Qrels, runs: RunSet) -> tuple[Path, Path]:
    """Write ``qrels.txt`` and ``runs/<run_id>`` under ``directory``; returns both paths."""
    directory = Path(directory)
    run_dir = directory / "runs"
    run_dir.mkdir(parents=True, exist_ok=True)
    qrels_path = directory / "qrels.txt"
    write_qrels(qrels_path, qrels)
    for run in runs.runs:
        write_run(run_dir / run.run_id, run)
    return qrels_path, run_dir
