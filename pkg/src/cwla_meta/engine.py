"""C/W/L/A metric engine.

A metric is a browsing model, given by the continuation probability C(i),
paired with an aggregation A(i). The score of a ranked gain vector r is

    M = sum_i L(i) * A(i),        L(i) = (1 - C(i)) * prod_{j<i} C(j).

Every function here works on a batch of gain vectors at once (last axis is
rank); the scalar helpers at the bottom wrap the batch versions.

Depth handling. The sum over i is infinite, but only ``depth`` positions are
observed. Two policies are offered:

``Truncation.STOP``
    C(depth) is forced to 0, so the user always stops by ``depth`` and
    ``sum L = 1``.
``Truncation.OPEN``
    C(depth) is left as the model defines it. Positions past ``depth`` are
    treated as non-relevant and the remainder of the infinite sum is added
    in closed form, which reproduces the textbook truncated metrics (RBP@d,
    ERR@d). ``last_probabilities`` still reports only positions ``1..depth``.

In both cases V+ (the expected number of items inspected, normaliser of the
ERG aggregation) is summed over positions ``1..depth``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import special

from .corpus_io import AssembledGains, GainScheme, GainVector


class InvalidMetricError(ValueError):
    """A browsing model / aggregation combination or parameter that cannot form a metric."""


class NumericError(ArithmeticError):
    """A score evaluated to NaN or infinity."""


class ModelKind(str, enum.Enum):
    PRECISION = "precision"
    DCG = "dcg"
    RBP = "rbp"
    INST = "inst"
    AP = "ap"
    ERR = "err"


class AggKind(str, enum.Enum):
    ERG = "erg"
    ETG = "etg"
    AVG = "avg"
    MAX = "max"
    FIN = "fin"
    PE = "pe"
    ERR = "err"


class Truncation(str, enum.Enum):
    STOP = "stop"
    OPEN = "open"


# Models whose C(i) does not depend on the gains.
STATIC_MODELS = frozenset({ModelKind.PRECISION, ModelKind.DCG, ModelKind.RBP})


def _fmt(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True)
class BrowsingModel:
    kind: ModelKind
    param: float | None = None

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = self.param
        if kind in (ModelKind.PRECISION, ModelKind.DCG):
            if p is None or p != int(p) or p < 1:
                raise InvalidMetricError(f"{kind.value} needs an integer cutoff k >= 1, got {p}")
            object.__setattr__(self, "param", int(p))
        elif kind is ModelKind.RBP:
            if p is None or not 0.0 < p < 1.0:
                raise InvalidMetricError(f"rbp needs a persistence 0 < p < 1, got {p}")
        elif kind is ModelKind.INST:
            if p is None or not (p > 0 and math.isfinite(p)):
                raise InvalidMetricError(f"inst needs an expected gain T > 0, got {p}")
        elif p is not None:
            raise InvalidMetricError(f"{kind.value} takes no parameter, got {p}")

    @classmethod
    def precision(cls, k: int = 10) -> BrowsingModel:
        return cls(ModelKind.PRECISION, k)

    @classmethod
    def dcg(cls, k: int = 10) -> BrowsingModel:
        return cls(ModelKind.DCG, k)

    @classmethod
    def rbp(cls, p: float = 0.8) -> BrowsingModel:
        return cls(ModelKind.RBP, p)

    @classmethod
    def inst(cls, T: float) -> BrowsingModel:
        return cls(ModelKind.INST, T)

    @classmethod
    def ap(cls) -> BrowsingModel:
        return cls(ModelKind.AP)

    @classmethod
    def err(cls) -> BrowsingModel:
        return cls(ModelKind.ERR)

    @property
    def label(self) -> str:
        if self.param is None:
            return self.kind.value
        return f"{self.kind.value}@{_fmt(self.param)}"

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class Aggregation:
    kind: AggKind
    beta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", AggKind(self.kind))
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidMetricError(f"peak-end beta must lie in [0, 1], got {self.beta}")

    @property
    def label(self) -> str:
        if self.kind is AggKind.PE and self.beta != 0.5:
            return f"pe@{_fmt(self.beta)}"
        return self.kind.value

    def __str__(self) -> str:
        return self.label


CANONICAL_AGG = {
    ModelKind.PRECISION: AggKind.ERG,
    ModelKind.DCG: AggKind.ERG,
    ModelKind.RBP: AggKind.ERG,
    ModelKind.INST: AggKind.ERG,
    ModelKind.AP: AggKind.ERG,
    ModelKind.ERR: AggKind.ERR,
}


def check_combination(model: BrowsingModel, agg: Aggregation) -> None:
    if agg.kind is AggKind.ERR and model.kind in STATIC_MODELS:
        raise InvalidMetricError(
            f"{model.label}+err is excluded from the C x A grid: L(i) does not depend on the gains "
            "for this browsing model, so the score sum_i L(i)/i is a constant and cannot rank anything"
        )


@dataclass(frozen=True)
class MetricSpec:
    model: BrowsingModel
    agg: Aggregation
    depth: int = 10
    truncation: Truncation = Truncation.STOP
    gain_scheme: GainScheme = GainScheme.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "truncation", Truncation(self.truncation))
        object.__setattr__(self, "gain_scheme", GainScheme(self.gain_scheme))
        if self.depth < 1:
            raise InvalidMetricError(f"depth must be >= 1, got {self.depth}")
        check_combination(self.model, self.agg)

    @property
    def name(self) -> str:
        return f"{self.model.label}+{self.agg.label}"

    @property
    def canonical(self) -> bool:
        return CANONICAL_AGG[self.model.kind] is self.agg.kind

    def __str__(self) -> str:
        return self.name


_MODEL_ALIASES = {
    "precision": ModelKind.PRECISION, "prec": ModelKind.PRECISION, "p": ModelKind.PRECISION,
    "dcg": ModelKind.DCG, "rbp": ModelKind.RBP, "inst": ModelKind.INST,
    "ap": ModelKind.AP, "err": ModelKind.ERR,
}
_AGG_ALIASES = {
    "erg": AggKind.ERG, "etg": AggKind.ETG, "avg": AggKind.AVG, "max": AggKind.MAX,
    "fin": AggKind.FIN, "pe": AggKind.PE, "err": AggKind.ERR, "erragg": AggKind.ERR,
}
_SPEC_RE = re.compile(r"^\s*([a-z]+)(?:@([^+\s]+))?\s*\+\s*([a-z]+)(?:-for-([a-z]+))?(?:@([^\s]+))?\s*$", re.IGNORECASE)


def parse_metric(
    text: str,
    depth: int = 10,
    truncation: Truncation | str = Truncation.STOP,
    gain_scheme: GainScheme | str | None = None,
) -> MetricSpec:
    """Parse ``MODEL[@PARAM]+AGG[@BETA]``, e.g. ``rbp@0.8+erg``, ``inst@2.25+max``, ``err+err``.

    ``AGG-for-MODEL`` (``err+errAgg-for-err``) is accepted as a long form.

    Without ``gain_scheme`` the ERR browsing model gets the exponential gain
    mapping and every other model the linear one.
    """
    m = _SPEC_RE.match(text)
    if not m:
        raise InvalidMetricError(f"cannot parse metric {text!r}; expected MODEL[@PARAM]+AGG")
    model_name, model_param, agg_name, agg_target, agg_param = m.groups()
    try:
        kind = _MODEL_ALIASES[model_name.lower()]
    except KeyError:
        raise InvalidMetricError(f"unknown browsing model {model_name!r} in {text!r}") from None
    # long form such as "errAgg-for-rbp" names the model twice; the two must agree
    if agg_target is not None and _MODEL_ALIASES.get(agg_target.lower()) is not kind:
        raise InvalidMetricError(f"aggregation {agg_name}-for-{agg_target} does not match model {model_name!r}")
    try:
        agg_kind = _AGG_ALIASES[agg_name.lower()]
    except KeyError:
        raise InvalidMetricError(f"unknown aggregation {agg_name!r} in {text!r}") from None

    def num(s: str | None) -> float | None:
        if s is None:
            return None
        try:
            return float(s)
        except ValueError:
            raise InvalidMetricError(f"parameter {s!r} in {text!r} is not a number") from None

    model = BrowsingModel(kind, num(model_param))
    if agg_param is not None and agg_kind is not AggKind.PE:
        raise InvalidMetricError(f"aggregation {agg_name!r} takes no parameter in {text!r}")
    agg = Aggregation(agg_kind) if agg_param is None else Aggregation(agg_kind, num(agg_param))
    if gain_scheme is None:
        gain_scheme = default_gain_scheme(model)
    return MetricSpec(model, agg, depth, Truncation(truncation), GainScheme(gain_scheme))


def default_gain_scheme(model: BrowsingModel) -> GainScheme:
    return GainScheme.EXPONENTIAL if model.kind is ModelKind.ERR else GainScheme.LINEAR


def grid_specs(
    inst_T: float,
    depth: int = 10,
    k: int = 10,
    rbp_p: float = 0.8,
    beta: float = 0.5,
    truncation: Truncation | str = Truncation.STOP,
) -> list[MetricSpec]:
    """All 39 valid browsing-model x aggregation cells, models in row order."""
    models = [
        BrowsingModel.precision(k), BrowsingModel.dcg(k), BrowsingModel.rbp(rbp_p),
        BrowsingModel.inst(inst_T), BrowsingModel.ap(), BrowsingModel.err(),
    ]
    specs = []
    for model in models:
        for kind in AggKind:
            if kind is AggKind.ERR and model.kind in STATIC_MODELS:
                continue
            agg = Aggregation(kind, beta)
            specs.append(MetricSpec(model, agg, depth, Truncation(truncation), default_gain_scheme(model)))
    return specs


# ---------------------------------------------------------------------------
# batch core


def _batch(gains, depth: int | None = None) -> np.ndarray:
    if isinstance(gains, GainVector):
        gains = gains.gains
    g = np.asarray(gains, dtype=np.float64)
    if g.ndim == 0:
        raise ValueError("gains must have at least one rank position")
    if depth is not None:
        d = g.shape[-1]
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if depth < d:
            g = g[..., :depth]
        elif depth > d:
            pad = [(0, 0)] * (g.ndim - 1) + [(0, depth - d)]
            g = np.pad(g, pad)
    if g.shape[-1] == 0:
        raise ValueError("gains must have at least one rank position")
    return g


def _ranks(d: int) -> np.ndarray:
    return np.arange(1, d + 1, dtype=np.float64)


def continuation_array(model: BrowsingModel, gains) -> np.ndarray:
    """C(i) for every position of every gain vector in the batch, as the model defines it."""
    g = _batch(gains)
    d = g.shape[-1]
    i = _ranks(d)
    kind = model.kind
    if kind is ModelKind.PRECISION:
        c = np.where(i < model.param, 1.0, 0.0)
        return np.broadcast_to(c, g.shape).copy()
    if kind is ModelKind.DCG:
        c = np.where(i < model.param, np.log2(i + 1) / np.log2(i + 2), 0.0)
        return np.broadcast_to(c, g.shape).copy()
    if kind is ModelKind.RBP:
        return np.full(g.shape, float(model.param))
    if kind is ModelKind.INST:
        T = model.param
        remaining = T - np.cumsum(g, axis=-1)
        x = i + T + remaining
        # i + T + T_i >= 2T > 0; C can only leave [0, 1] when T < 1/4 and gains saturate
        return np.clip(((x - 1.0) / x) ** 2, 0.0, 1.0)
    if kind is ModelKind.AP:
        # suffix[i] = sum_{j >= i} r_j / j, truncated at the vector's depth
        suffix = np.flip(np.cumsum(np.flip(g / i, axis=-1), axis=-1), axis=-1)
        after = np.concatenate([suffix[..., 1:], np.zeros(g.shape[:-1] + (1,))], axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(suffix > 0.0, after / np.where(suffix > 0.0, suffix, 1.0), 0.0)
        return c
    if kind is ModelKind.ERR:
        return 1.0 - g
    raise AssertionError(kind)


def _effective_continuation(model: BrowsingModel, g: np.ndarray, truncation: Truncation) -> np.ndarray:
    c = continuation_array(model, g)
    if Truncation(truncation) is Truncation.STOP:
        c[..., -1] = 0.0
    return c


def _reach(c: np.ndarray) -> np.ndarray:
    """prod_{j<i} C(j): probability that position i is inspected."""
    reach = np.ones_like(c)
    reach[..., 1:] = np.cumprod(c[..., :-1], axis=-1)
    return reach


def last_array(model: BrowsingModel, gains, truncation: Truncation | str = Truncation.STOP) -> np.ndarray:
    g = _batch(gains)
    c = _effective_continuation(model, g, truncation)
    return (1.0 - c) * _reach(c)


def v_plus_array(model: BrowsingModel, gains, truncation: Truncation | str = Truncation.STOP) -> np.ndarray:
    g = _batch(gains)
    return _reach(_effective_continuation(model, g, truncation)).sum(axis=-1)


def aggregate_array(agg: Aggregation, gains, v_plus=None) -> np.ndarray:
    """A(i) for every position. ``v_plus`` (broadcast per vector) is required for ERG."""
    g = _batch(gains)
    d = g.shape[-1]
    i = _ranks(d)
    kind = agg.kind
    if kind is AggKind.ERG:
        if v_plus is None:
            raise ValueError("the ERG aggregation needs V+")
        return np.cumsum(g, axis=-1) / np.asarray(v_plus, dtype=np.float64)[..., None]
    if kind is AggKind.ETG:
        return np.cumsum(g, axis=-1)
    if kind is AggKind.AVG:
        return np.cumsum(g, axis=-1) / i
    if kind is AggKind.MAX:
        return np.maximum.accumulate(g, axis=-1)
    if kind is AggKind.FIN:
        return g.copy()
    if kind is AggKind.PE:
        return agg.beta * np.maximum.accumulate(g, axis=-1) + (1.0 - agg.beta) * g
    if kind is AggKind.ERR:
        return np.broadcast_to(1.0 / i, g.shape).copy()
    raise AssertionError(kind)


def _hurwitz_f(a: np.ndarray, m: int) -> np.ndarray:
    """sum_{i >= m} 1 / (i * (i + a)**2), for a > -m."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    small = np.abs(a) < 1e-2
    if np.any(small):
        s = a[small]
        # (1 + a/i)^-2 expanded; the a^4 remainder is below 1e-15 here
        out[small] = (special.zeta(3, m) - 2 * s * special.zeta(4, m)
                      + 3 * s**2 * special.zeta(5, m) - 4 * s**3 * special.zeta(6, m))
    big = ~small
    if np.any(big):
        s = a[big]
        out[big] = (special.psi(m + s) - special.psi(m)) / s**2 - special.polygamma(1, m + s) / s
    return out


def _open_tail(model: BrowsingModel, g: np.ndarray, c: np.ndarray, reach: np.ndarray):
    """Tail of the infinite sum for positions past depth, whose gains are taken as 0.

    Returns ``(Q, H)`` with ``Q = sum_{i>d} L(i)`` and ``H = sum_{i>d} L(i) / i``.
    """
    d = g.shape[-1]
    past = reach[..., -1] * c[..., -1]  # probability of inspecting position d + 1
    zeros = np.zeros_like(past)
    kind = model.kind
    if kind in (ModelKind.AP, ModelKind.ERR):
        # AP: C(d) is always 0. ERR: with zero gain C = 1, so nobody past d ever stops.
        return zeros, zeros
    if kind is ModelKind.PRECISION:
        k = model.param
        if d >= k:
            return zeros, zeros
        return past, past / k
    if kind is ModelKind.DCG:
        k = model.param
        if d >= k:
            return zeros, zeros
        h, reach_i = 0.0, 1.0
        for i in range(d + 1, k + 1):
            ci = math.log2(i + 1) / math.log2(i + 2) if i < k else 0.0
            h += reach_i * (1.0 - ci) / i
            reach_i *= ci
        return past, past * h
    if kind is ModelKind.RBP:
        p = model.param
        head = sum(p**i / i for i in range(1, d + 1))
        h = (1.0 - p) / p * (-math.log1p(-p) - head)
        return past, np.full_like(past, max(h, 0.0))
    if kind is ModelKind.INST:
        T = model.param
        c0 = 2.0 * T - g.sum(axis=-1)  # T + T_d
        scale = past * (d + c0) ** 2
        h = scale * (_hurwitz_f(c0 - 1.0, d + 1) - _hurwitz_f(c0, d + 1))
        return past, np.maximum(h, 0.0)
    raise AssertionError(kind)


def cwla_scores(
    model: BrowsingModel,
    agg: Aggregation,
    gains,
    truncation: Truncation | str = Truncation.STOP,
    v_plus=None,
) -> np.ndarray:
    """Scores for a batch of gain vectors without checking the model/aggregation pairing.

    ``v_plus`` overrides the computed V+ (e.g. the analytic 1/(1-p) for RBP).
    """
    truncation = Truncation(truncation)
    g = _batch(gains)
    c = _effective_continuation(model, g, truncation)
    reach = _reach(c)
    last = (1.0 - c) * reach
    vp = reach.sum(axis=-1) if v_plus is None else np.broadcast_to(np.asarray(v_plus, dtype=np.float64), g.shape[:-1])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):  # checked below
        a = aggregate_array(agg, g, vp)
        total = (last * a).sum(axis=-1)

    if truncation is Truncation.OPEN:
        q, h = _open_tail(model, g, c, reach)
        gained = g.sum(axis=-1)
        best = g.max(axis=-1)
        kind = agg.kind
        if kind is AggKind.ERG:
            total = total + q * gained / vp
        elif kind is AggKind.ETG:
            total = total + q * gained
        elif kind is AggKind.MAX:
            total = total + q * best
        elif kind is AggKind.PE:
            total = total + q * agg.beta * best
        elif kind is AggKind.AVG:
            total = total + h * gained
        elif kind is AggKind.ERR:
            total = total + h
        # FIN: zero gain past d contributes nothing

    if not np.all(np.isfinite(total)):
        raise NumericError(f"{model.label}+{agg.label} produced a non-finite score")
    return total


def score_batch(spec: MetricSpec, gains, v_plus=None) -> np.ndarray:
    g = _batch(gains, spec.depth)
    return cwla_scores(spec.model, spec.agg, g, spec.truncation, v_plus)


# ---------------------------------------------------------------------------
# scalar API


def _vector(gains, depth: int | None = None) -> np.ndarray:
    g = _batch(gains, depth)
    if g.ndim != 1:
        raise ValueError("expected a single gain vector")
    return g


def _check_rank(i: int, depth: int) -> None:
    if not 1 <= i <= depth:
        raise ValueError(f"rank {i} outside [1, {depth}]")


def continuation(model: BrowsingModel, i: int, gains) -> float:
    g = _vector(gains)
    _check_rank(i, g.size)
    return float(continuation_array(model, g)[i - 1])


def last_probabilities(model: BrowsingModel, gains, depth: int | None = None,
                       truncation: Truncation | str = Truncation.STOP) -> np.ndarray:
    return last_array(model, _vector(gains, depth), truncation)


def v_plus(model: BrowsingModel, gains, depth: int | None = None,
           truncation: Truncation | str = Truncation.STOP) -> float:
    return float(v_plus_array(model, _vector(gains, depth), truncation))


def weights(model: BrowsingModel, gains, depth: int | None = None,
            truncation: Truncation | str = Truncation.STOP) -> np.ndarray:
    """W(i): share of user attention at each position; sums to 1."""
    g = _vector(gains, depth)
    reach = _reach(_effective_continuation(model, g, truncation))
    return reach / reach.sum()


def aggregate(agg: Aggregation, gains, i: int, v_plus: float | None = None) -> float:
    g = _vector(gains)
    _check_rank(i, g.size)
    return float(aggregate_array(agg, g, v_plus)[i - 1])


def score(spec: MetricSpec, gains, v_plus: float | None = None) -> float:
    return float(score_batch(spec, _vector(gains), v_plus))


# ---------------------------------------------------------------------------
# score matrices


@dataclass(frozen=True)
class ScoreMatrix:
    """Topic-by-run scores: ``values[t, k]`` is run ``run_ids[k]`` on topic ``topic_ids[t]``."""

    topic_ids: tuple[str, ...]
    run_ids: tuple[str, ...]
    values: np.ndarray
    metric: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "topic_ids", tuple(self.topic_ids))
        object.__setattr__(self, "run_ids", tuple(self.run_ids))
        if v.shape != (len(self.topic_ids), len(self.run_ids)):
            raise ValueError(f"values shape {v.shape} does not match {len(self.topic_ids)} topics x {len(self.run_ids)} runs")
        if not np.all(np.isfinite(v)):
            raise NumericError("score matrix contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def run_means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def select_topics(self, topic_ids: Sequence[str]) -> ScoreMatrix:
        rows = [self.topic_ids.index(t) for t in topic_ids]
        return ScoreMatrix(tuple(topic_ids), self.run_ids, self.values[rows], self.metric)

    def write_csv(self, fh: IO[str], comments: Iterable[str] = ()) -> None:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(["topic", *self.run_ids]) + "\n")
        for t, row in zip(self.topic_ids, self.values):
            fh.write(",".join([t, *(f"{x:.10g}" for x in row)]) + "\n")

    @classmethod
    def read_csv(cls, fh: IO[str], metric: str = "") -> ScoreMatrix:
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip() and not line.startswith("#")]
        header, body = rows[0], rows[1:]
        return cls(
            tuple(r[0] for r in body), tuple(header[1:]),
            np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), len(header) - 1),
            metric,
        )


def score_matrix(gains: AssembledGains, spec: MetricSpec) -> ScoreMatrix:
    if gains.mapping.scheme is not spec.gain_scheme:
        raise ValueError(
            f"{spec.name} expects {spec.gain_scheme.value} gains, got {gains.mapping.scheme.value}"
        )
    try:
        scores = score_batch(spec, gains.array)  # (K, T)
    except NumericError:
        # locate the first offending cell for the message
        for i, run in enumerate(gains.run_ids):
            for j, topic in enumerate(gains.topic_ids):
                try:
                    score_batch(spec, gains.array[i, j])
                except NumericError as exc:
                    raise NumericError(f"run {run}, topic {topic}: {exc}") from None
        raise
    return ScoreMatrix(gains.topic_ids, gains.run_ids, scores.T, spec.name)
