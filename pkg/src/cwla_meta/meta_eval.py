"""Meta-evaluation of metrics: ranking similarity, ranking consistency, discriminative power.

Randomness. Every random draw comes from a PCG64 stream seeded by
``SeedSequence(seed, spawn_key=(stream, trial))``: one independent substream
per trial, with ``stream`` separating the topic-split sampler from the
permutation test. Trials can therefore be computed in any order or on any
number of workers and still give bit-identical results.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Mapping, Sequence

import numpy as np

from .engine import ScoreMatrix

SPLIT_STREAM = 1
HSD_STREAM = 2

DEFAULT_B = 1000
DEFAULT_HSD_TRIALS = 2000
DEFAULT_ALPHA = 0.05

# Means are compared after rounding to this many decimals, so that values
# equal in exact arithmetic (e.g. ETG = V+ * ERG) tie instead of differing in
# the last bit.
MEAN_DECIMALS = 12


def trial_rng(seed: int, stream: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, trial))))


def _run_chunked(fn: Callable[[int, int], np.ndarray], n: int, workers: int) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` over contiguous trial blocks and concatenate in trial order."""
    if workers <= 1 or n < 2:
        return fn(0, n)
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, bounds[:-1], bounds[1:]))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# rankings and Kendall's tau


@dataclass(frozen=True)
class RunRanking:
    """Run ids best first. ``tied`` records that equal means had to be broken by run id."""

    run_ids: tuple[str, ...]
    tied: bool = False

    def __post_init__(self):
        if len(set(self.run_ids)) != len(self.run_ids):
            raise ValueError("a ranking lists each run exactly once")

    def __len__(self) -> int:
        return len(self.run_ids)

    def reversed(self) -> RunRanking:
        return RunRanking(self.run_ids[::-1], self.tied)


def mean_scores(matrix: ScoreMatrix, topic_ids: Sequence[str] | None = None) -> dict[str, float]:
    if topic_ids is None:
        values = matrix.values
    else:
        if len(topic_ids) == 0:
            raise ValueError("cannot average over an empty topic subset")
        index = {t: n for n, t in enumerate(matrix.topic_ids)}
        missing = [t for t in topic_ids if t not in index]
        if missing:
            raise ValueError(f"topics not in the score matrix: {missing[:5]}")
        values = matrix.values[[index[t] for t in topic_ids]]
    return dict(zip(matrix.run_ids, values.mean(axis=0).tolist()))


def rank_runs(means: Mapping[str, float]) -> RunRanking:
    """Descending mean, ties broken by ascending run id."""
    rounded = dict(zip(means, np.round(np.fromiter(means.values(), float, len(means)), MEAN_DECIMALS).tolist()))
    order = sorted(rounded, key=lambda r: (-rounded[r], r))
    values = list(rounded.values())
    tied = len(set(values)) != len(values)
    return RunRanking(tuple(order), tied)


def kendall_tau(a: RunRanking | Sequence[str], b: RunRanking | Sequence[str]) -> float:
    """Tau-a between two total orders of the same runs: (concordant - discordant) / (n choose 2)."""
    a = a.run_ids if isinstance(a, RunRanking) else tuple(a)
    b = b.run_ids if isinstance(b, RunRanking) else tuple(b)
    if len(a) != len(b) or set(a) != set(b):
        raise ValueError("rankings must cover the same set of runs")
    n = len(a)
    if n < 2:
        raise ValueError("Kendall's tau needs at least two runs")
    pos_b = {r: i for i, r in enumerate(b)}
    seq = np.array([pos_b[r] for r in a])
    # pairs (i < j) in a are concordant when b also puts a[i] first
    upper = np.triu(np.sign(seq[None, :] - seq[:, None]), k=1)
    return float(upper.sum()) / (n * (n - 1) / 2)


def tau_ci(tau: float, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval with var(tau) = 2(2n+5) / (9n(n-1)), clipped to [-1, 1]."""
    if n < 4:
        raise ValueError(f"a tau interval needs n >= 4 runs, got {n}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    half = z * math.sqrt(2 * (2 * n + 5) / (9 * n * (n - 1)))
    return max(-1.0, tau - half), min(1.0, tau + half)


def _order_keys(run_ids: Sequence[str]) -> np.ndarray:
    """Position of each run in ascending-id order (the tie-break key)."""
    keys = np.empty(len(run_ids), dtype=np.int64)
    keys[np.argsort(np.array(run_ids, dtype=object), kind="stable")] = np.arange(len(run_ids))
    return keys


def _positions(means: np.ndarray, id_keys: np.ndarray) -> np.ndarray:
    """Rank position of every run (0 = best) for each row of ``means``."""
    keys = np.broadcast_to(id_keys, means.shape)
    order = np.lexsort((keys, -np.round(means, MEAN_DECIMALS)), axis=-1)
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(means.shape[-1]), axis=-1)
    return pos


def _tau_rows(pos1: np.ndarray, pos2: np.ndarray) -> np.ndarray:
    """Tau-a between matching rows of two position arrays (..., K)."""
    k = pos1.shape[-1]
    iu = np.triu_indices(k, 1)
    d1 = np.sign(pos1[..., :, None] - pos1[..., None, :])[..., iu[0], iu[1]]
    d2 = np.sign(pos2[..., :, None] - pos2[..., None, :])[..., iu[0], iu[1]]
    return (d1 * d2).sum(axis=-1) / (k * (k - 1) / 2)


def _has_ties(means: np.ndarray) -> np.ndarray:
    s = np.sort(np.round(means, MEAN_DECIMALS), axis=-1)
    return np.any(s[..., 1:] == s[..., :-1], axis=-1)


# ---------------------------------------------------------------------------
# ranking similarity


@dataclass(frozen=True)
class SimilarityGrid:
    labels: tuple[str, ...]
    tau: np.ndarray
    low: np.ndarray
    high: np.ndarray
    n_runs: int
    tied: tuple[str, ...] = ()


def _aligned(matrices: Mapping[str, ScoreMatrix]) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    """Stack matrices as (M, T, K) after reordering rows/columns to the first matrix's ids."""
    items = list(matrices.values())
    first = items[0]
    stack = []
    for label, m in matrices.items():
        if set(m.run_ids) != set(first.run_ids) or set(m.topic_ids) != set(first.topic_ids):
            raise ValueError(f"{label}: score matrices must share the same runs and topics")
        rows = [m.topic_ids.index(t) for t in first.topic_ids]
        cols = [m.run_ids.index(r) for r in first.run_ids]
        stack.append(m.values[np.ix_(rows, cols)])
    return first.topic_ids, first.run_ids, np.stack(stack)


def similarity_grid(matrices: Mapping[str, ScoreMatrix], confidence: float = 0.95) -> SimilarityGrid:
    """Kendall's tau (with intervals) between the run rankings induced by each matrix."""
    if len(matrices) < 2:
        raise ValueError("a similarity grid needs at least two metrics")
    labels = tuple(matrices)
    _, run_ids, stack = _aligned(matrices)
    rankings = {label: rank_runs(dict(zip(run_ids, stack[n].mean(axis=0).tolist())))
                for n, label in enumerate(labels)}
    m, n = len(labels), len(run_ids)
    tau = np.eye(m)
    for x, y in itertools.combinations(range(m), 2):
        tau[x, y] = tau[y, x] = kendall_tau(rankings[labels[x]], rankings[labels[y]])
    low = np.full_like(tau, np.nan)
    high = np.full_like(tau, np.nan)
    if n >= 4:  # no interval below 4 runs
        for x, y in itertools.product(range(m), repeat=2):
            low[x, y], high[x, y] = tau_ci(tau[x, y], n, confidence)
    tied = tuple(label for label in labels if rankings[label].tied)
    return SimilarityGrid(labels, tau, low, high, n, tied)


# ---------------------------------------------------------------------------
# system ranking consistency


def split_sizes(n_topics: int) -> tuple[int, int]:
    n1 = n_topics // 2
    return n1, n_topics - n1


def topic_split(n_topics: int, seed: int, trial: int) -> np.ndarray:
    """Sorted indices of the first half for one trial; the second half is the complement."""
    if n_topics < 2:
        raise ValueError(f"splitting needs at least 2 topics, got {n_topics}")
    n1, _ = split_sizes(n_topics)
    rng = trial_rng(seed, SPLIT_STREAM, trial)
    return np.sort(rng.permutation(n_topics)[:n1])


@dataclass(frozen=True)
class ConsistencyMatrix:
    """``values[b, m]`` is the consistency tau of metric ``metric_ids[m]`` on split ``b``."""

    metric_ids: tuple[str, ...]
    values: np.ndarray
    seed: int
    tie_trials: tuple[int, ...] = ()

    @property
    def B(self) -> int:
        return self.values.shape[0]

    def mean_tau(self) -> np.ndarray:
        return self.values.mean(axis=0)


def consistency_matrix(
    matrices: Mapping[str, ScoreMatrix],
    B: int = DEFAULT_B,
    seed: int = 42,
    workers: int = 1,
) -> ConsistencyMatrix:
    """Split the topics in half B times; each split is shared by every metric."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if not matrices:
        raise ValueError("no score matrices given")
    labels = tuple(matrices)
    topic_ids, run_ids, stack = _aligned(matrices)  # (M, T, K)
    n_topics = len(topic_ids)
    if n_topics < 2:
        raise ValueError(f"consistency needs at least 2 topics, got {n_topics}")
    if len(run_ids) < 2:
        raise ValueError("consistency needs at least 2 runs")
    id_keys = _order_keys(run_ids)

    def block(start: int, stop: int) -> np.ndarray:
        out = np.empty((stop - start, len(labels) + len(labels)))
        for row, b in enumerate(range(start, stop)):
            first = topic_split(n_topics, seed, b)
            mask = np.zeros(n_topics, dtype=bool)
            mask[first] = True
            m1 = stack[:, mask, :].mean(axis=1)
            m2 = stack[:, ~mask, :].mean(axis=1)
            out[row, : len(labels)] = _tau_rows(_positions(m1, id_keys), _positions(m2, id_keys))
            out[row, len(labels):] = _has_ties(m1) | _has_ties(m2)
        return out

    result = _run_chunked(block, B, workers)
    taus, ties = result[:, : len(labels)], result[:, len(labels):]
    return ConsistencyMatrix(labels, taus, seed, tuple(int(x) for x in ties.sum(axis=0)))


def consistency_trials(matrix: ScoreMatrix, B: int = DEFAULT_B, seed: int = 42, workers: int = 1) -> np.ndarray:
    """The B consistency taus of one metric (same splits as :func:`consistency_matrix`)."""
    return consistency_matrix({matrix.metric or "metric": matrix}, B, seed, workers).values[:, 0]


# ---------------------------------------------------------------------------
# randomised Tukey HSD


@dataclass(frozen=True)
class HsdResult:
    """Pairwise outcome of a randomised Tukey HSD test over the columns of a data matrix.

    ``observed[a, b]`` is |mean(col a) - mean(col b)|; ``asl[a, b]`` the
    fraction of trials whose largest column-mean range reached it.
    """

    observed: np.ndarray
    asl: np.ndarray
    null_max: np.ndarray
    trials: int
    seed: int


def randomized_tukey_hsd(data, trials: int = DEFAULT_HSD_TRIALS, seed: int = 42, workers: int = 1) -> HsdResult:
    """Randomised (permutation) Tukey HSD on an ``rows x columns`` matrix.

    Each trial shuffles the values within every row independently, then
    records the largest difference between any two column means. A pair's ASL
    is the share of trials where that maximum is at least the pair's observed
    difference, which controls the familywise error over all pairs.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need at least 2 rows and 2 columns, got shape {x.shape}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    means = x.mean(axis=0)
    observed = np.abs(means[:, None] - means[None, :])

    def block(start: int, stop: int) -> np.ndarray:
        out = np.empty(stop - start)
        for row, t in enumerate(range(start, stop)):
            shuffled = trial_rng(seed, HSD_STREAM, t).permuted(x, axis=1)
            m = shuffled.mean(axis=0)
            out[row] = m.max() - m.min()
        return out

    null_max = _run_chunked(block, trials, workers)
    # column sums of a shuffled matrix may differ from the original in the last bit
    tol = 1e-12 * max(1.0, float(np.abs(x).max()))
    asl = (null_max[None, None, :] >= observed[:, :, None] - tol).mean(axis=-1)
    return HsdResult(observed, asl, null_max, trials, seed)


# ---------------------------------------------------------------------------
# consistency significance


@dataclass(frozen=True)
class ConsistencyRow:
    metric: str
    mean_tau: float
    outperforms: int
    ties: int = 0


def consistency_significance(
    cm: ConsistencyMatrix,
    trials: int = DEFAULT_HSD_TRIALS,
    seed: int = 42,
    alpha: float = DEFAULT_ALPHA,
    metrics: Sequence[str] | None = None,
    workers: int = 1,
) -> list[ConsistencyRow]:
    """Per metric, how many others it beats significantly in mean tau; best mean first.

    ``metrics`` restricts the comparison family (e.g. the aggregations of one
    browsing model); by default all columns are compared.
    """
    if cm.B < 2:
        raise ValueError("significance testing needs B >= 2")
    cols = list(range(len(cm.metric_ids))) if metrics is None else [cm.metric_ids.index(m) for m in metrics]
    means = cm.values[:, cols].mean(axis=0)
    if len(cols) < 2:
        counts = np.zeros(len(cols), dtype=int)
    else:
        hsd = randomized_tukey_hsd(cm.values[:, cols], trials, seed, workers)
        better = means[:, None] > means[None, :]
        counts = ((hsd.asl < alpha) & better).sum(axis=1)
    rows = [
        ConsistencyRow(cm.metric_ids[c], float(means[n]), int(counts[n]),
                       cm.tie_trials[c] if cm.tie_trials else 0)
        for n, c in enumerate(cols)
    ]
    return sorted(rows, key=lambda r: -r.mean_tau)


# ---------------------------------------------------------------------------
# discriminative power


@dataclass(frozen=True)
class AslPair:
    run_a: str
    run_b: str
    diff: float
    asl: float


@dataclass(frozen=True)
class AslTable:
    pairs: tuple[AslPair, ...]
    trials: int
    seed: int
    metric: str = ""


def asl_table(matrix: ScoreMatrix, trials: int = DEFAULT_HSD_TRIALS, seed: int = 42, workers: int = 1) -> AslTable:
    """ASL for every run pair of one metric, pairs in run order (a before b)."""
    if len(matrix.run_ids) < 2:
        raise ValueError("discriminative power needs at least 2 runs")
    hsd = randomized_tukey_hsd(matrix.values, trials, seed, workers)
    pairs = tuple(
        AslPair(matrix.run_ids[a], matrix.run_ids[b], float(hsd.observed[a, b]), float(hsd.asl[a, b]))
        for a, b in itertools.combinations(range(len(matrix.run_ids)), 2)
    )
    return AslTable(pairs, trials, seed, matrix.metric)


def asl_curve(table: AslTable) -> list[tuple[int, float]]:
    """ASLs sorted ascending against their 1-based position: the points of an ASL curve."""
    if not table.pairs:
        raise ValueError("empty ASL table")
    return [(n, asl) for n, asl in enumerate(sorted(p.asl for p in table.pairs), start=1)]


def discriminative_power(table: AslTable, alpha: float = DEFAULT_ALPHA) -> float:
    """Fraction of run pairs with ASL below ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not table.pairs:
        return 0.0
    return sum(p.asl < alpha for p in table.pairs) / len(table.pairs)
