"""Exit criteria for the package. Each test carries ``@pytest.mark.acceptance(n, title)``;
the conftest hook prints one PASS/FAIL line per criterion at the end of the run.

Set ``CWLA_REGEN_GOLDEN=1`` to rewrite the golden files after an intended format change.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from cwla_meta.cli import main
from cwla_meta.corpus_io import AssembledGains, GainMapping, GainScheme, map_gain
from cwla_meta.engine import (
    AggKind, Aggregation, BrowsingModel, InvalidMetricError, MetricSpec, ModelKind, STATIC_MODELS,
    ScoreMatrix, cwla_scores, last_array, parse_metric, grid_specs, score, score_matrix, v_plus, weights,
)
from cwla_meta.meta_eval import (
    consistency_matrix, consistency_trials, kendall_tau, mean_scores, randomized_tukey_hsd, rank_runs,
    split_sizes, topic_split,
)

HERE = Path(__file__).parent
MAX_LEVEL = 3


def graded_gains(rng, n, depth, scheme):
    table = np.array([map_gain(x, GainMapping(scheme, MAX_LEVEL)) for x in range(MAX_LEVEL + 1)])
    return table[rng.integers(0, MAX_LEVEL + 1, size=(n, depth))]


# --- 1 ------------------------------------------------------------------------

ORACLES = "oracle equivalence with textbook metrics (1e-9)"


@pytest.mark.acceptance(1, ORACLES)
def test_oracle_equivalence_graded():
    start = time.perf_counter()
    rng = np.random.default_rng(20240101)
    linear = graded_gains(rng, 1000, 10, GainScheme.LINEAR)
    exponential = graded_gains(rng, 1000, 10, GainScheme.EXPONENTIAL)

    precision = parse_metric("precision@10+erg")
    rbp = parse_metric("rbp@0.8+erg", truncation="open")
    dcg_model = BrowsingModel.dcg(10)
    dcg = MetricSpec(dcg_model, Aggregation("erg"))
    err = parse_metric("err+err", truncation="open")
    worst = 0.0
    for g, ge in zip(linear, exponential):
        gl = g.tolist()
        worst = max(
            worst,
            abs(score(precision, g) - oracles.precision_at_k(gl, 10)),
            abs(score(rbp, g, v_plus=1 / (1 - 0.8)) - oracles.rbp(gl, 0.8)),
            abs(score(dcg, g) * v_plus(dcg_model, g) - oracles.dcg_at_k(gl, 10)),
            abs(score(err, ge) - oracles.err(ge.tolist())),
        )
    assert worst < 1e-9
    assert time.perf_counter() - start < 10


@pytest.mark.acceptance(1, ORACLES)
def test_oracle_equivalence_ap_exhaustive():
    start = time.perf_counter()
    cases = 0
    for length in range(1, 9):
        spec = MetricSpec(BrowsingModel.ap(), Aggregation("erg"), depth=length)
        for bits in itertools.product((0, 1), repeat=length):
            assert score(spec, bits) == pytest.approx(oracles.average_precision(bits), abs=1e-9)
            cases += 1
    assert cases == 2**9 - 2
    assert time.perf_counter() - start < 10


# --- 2 ------------------------------------------------------------------------

MODELS = [
    BrowsingModel.precision(10), BrowsingModel.dcg(10), BrowsingModel.rbp(0.8),
    BrowsingModel.inst(2.25), BrowsingModel.ap(), BrowsingModel.err(),
]


@pytest.mark.acceptance(2, "last probabilities and weights each sum to 1 (1e-9)")
def test_normalisation():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    for model in MODELS:
        scheme = GainScheme.EXPONENTIAL if model.kind is ModelKind.ERR else GainScheme.LINEAR
        g = graded_gains(rng, 1000, 10, scheme)
        last_sums = last_array(model, g, "stop").sum(axis=1)
        assert np.max(np.abs(last_sums - 1)) < 1e-9, model
        for row in g:
            assert abs(weights(model, row).sum() - 1) < 1e-9
    assert time.perf_counter() - start < 5


# --- 3 ------------------------------------------------------------------------


@pytest.mark.acceptance(3, "excluded cells rejected and constant")
@pytest.mark.parametrize("model", ["precision@10", "dcg@10", "rbp@0.8"])
def test_excluded_cells(model):
    with pytest.raises(InvalidMetricError, match="constant"):
        parse_metric(f"{model}+err")
    spec = parse_metric(f"{model}+erg")
    with pytest.raises(InvalidMetricError):
        MetricSpec(spec.model, Aggregation("err"))
    g = np.random.default_rng(3).random((100, 10))
    forced = cwla_scores(spec.model, Aggregation("err"), g)
    assert np.var(forced) < 1e-18
    # the other cells of the same model do move with the gains
    assert np.var(cwla_scores(spec.model, Aggregation("erg"), g)) > 1e-6
    assert len(grid_specs(inst_T=2.25)) == 39


# --- 4 ------------------------------------------------------------------------


def _rank(gains, spec):
    return rank_runs(mean_scores(score_matrix(gains, spec)))


@pytest.mark.acceptance(4, "Erg and Etg give identical run rankings for static models")
def test_ranking_identities():
    rng = np.random.default_rng(4)
    mapping = GainMapping(GainScheme.LINEAR, MAX_LEVEL)
    run_ids = tuple(f"run{k:02d}" for k in range(20))
    topic_ids = tuple(f"t{t:02d}" for t in range(40))
    for _ in range(50):
        array = graded_gains(rng, 20 * 40, 10, GainScheme.LINEAR).reshape(20, 40, 10)
        gains = AssembledGains(run_ids, topic_ids, 10, array, mapping)
        for model in ("precision@10", "dcg@10", "rbp@0.8"):
            erg = _rank(gains, parse_metric(f"{model}+erg"))
            etg = _rank(gains, parse_metric(f"{model}+etg"))
            assert kendall_tau(erg, etg) == 1.0
        prec_erg = _rank(gains, parse_metric("precision@10+erg"))
        assert kendall_tau(prec_erg, _rank(gains, parse_metric("precision@10+avg"))) == 1.0


# --- 5 ------------------------------------------------------------------------

CONSISTENCY = "consistency sampler: split sizes, rank-preserving data, worker invariance"


@pytest.mark.acceptance(5, CONSISTENCY)
@pytest.mark.parametrize("n_topics", [80, 81, 7])
def test_split_sizes(n_topics):
    first, second = split_sizes(n_topics)
    assert first == math.trunc(n_topics / 2) and first + second == n_topics
    for trial in range(1000):
        assert len(topic_split(n_topics, 42, trial)) == first


def _matrix(values, name):
    t, k = values.shape
    return ScoreMatrix(tuple(f"t{i:02d}" for i in range(t)), tuple(f"run{j:02d}" for j in range(k)), values, name)


@pytest.mark.acceptance(5, CONSISTENCY)
def test_duplicated_halves_are_fully_consistent():
    rng = np.random.default_rng(5)
    quality = rng.permutation(40) / 40
    # every topic ranks the runs the same way, and the second half repeats the first
    half = rng.uniform(0.5, 2.0, (40, 1)) * quality + rng.uniform(0, 0.3, (40, 1))
    values = np.vstack([half, half])
    taus = consistency_trials(_matrix(values, "m"), B=1000, seed=42)
    assert taus.shape == (1000,)
    assert taus.mean() == 1.0


@pytest.mark.acceptance(5, CONSISTENCY)
def test_consistency_worker_invariance_and_runtime():
    rng = np.random.default_rng(6)
    matrices = {f"m{i}": _matrix(rng.random((80, 40)), f"m{i}") for i in range(3)}
    start = time.perf_counter()
    one = consistency_matrix(matrices, B=1000, seed=42, workers=1)
    assert time.perf_counter() - start < 30
    eight = consistency_matrix(matrices, B=1000, seed=42, workers=8)
    assert one.values.tobytes() == eight.values.tobytes()
    assert one.tie_trials == eight.tie_trials


# --- 6 ------------------------------------------------------------------------

HSD = "randomised Tukey HSD calibration"


@pytest.mark.acceptance(6, HSD)
def test_hsd_familywise_error_on_null_data():
    start = time.perf_counter()
    reps, alpha = 200, 0.05
    false_alarms = 0
    for r in range(reps):
        data = np.random.default_rng([6, r]).normal(size=(40, 10))
        asl = randomized_tukey_hsd(data, trials=2000, seed=r).asl
        false_alarms += bool((asl[np.triu_indices(10, 1)] < alpha).any())
    fwer = false_alarms / reps
    bound = alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)
    print(f"null-data FWER {fwer:.3f} (bound {bound:.3f})")
    assert 0 <= fwer <= bound
    assert time.perf_counter() - start < 300


@pytest.mark.acceptance(6, HSD)
def test_hsd_matches_exhaustive_enumeration():
    rng = np.random.default_rng(66)
    for case in range(5):
        data = rng.random((4, 2))
        exact = oracles.exact_hsd_asl_two_columns(data.tolist())
        sampled = randomized_tukey_hsd(data, trials=2000, seed=case).asl[0, 1]
        assert abs(sampled - exact) <= 0.02, (case, sampled, exact)


# --- 7 ------------------------------------------------------------------------


@pytest.mark.acceptance(7, "end-to-end 39 runs x 80 topics, byte-reproducible, < 10 min")
def test_end_to_end(tmp_path):
    start = time.perf_counter()
    corpus = tmp_path / "corpus"
    assert main(["synth", "--n-runs", "39", "--n-topics", "80", "--seed", "1", "--out", str(corpus)]) == 0
    common = ["--qrels", str(corpus / "qrels.txt"), "--runs", str(corpus / "runs"),
              "--metrics", "all", "--inst-t", "2.25", "--seed", "42"]
    outputs = []
    for workers in ("1", "4"):
        out = tmp_path / f"out_w{workers}"
        for command in ("score", "consistency", "discpower"):
            assert main([command, *common, "--B", "1000", "--hsd-trials", "2000",
                         "--workers", workers, "--out", str(out)]) == 0
        outputs.append(out)
    assert time.perf_counter() - start < 600

    files = sorted(p.relative_to(outputs[0]) for p in outputs[0].rglob("*.csv"))
    assert len(files) == 39 + 2 + 2 * 39 + 2
    for rel in files:
        assert (outputs[0] / rel).read_bytes() == (outputs[1] / rel).read_bytes(), rel
    raw = (outputs[0] / "consistency_tau.csv").read_text().splitlines()
    assert sum(not ln.startswith("#") for ln in raw) == 1 + 1000


# --- 8 ------------------------------------------------------------------------

GOLDEN = "golden-file format of the consistency summary and ASL curves"
GOLDEN_FILES = ("consistency_summary.csv", "asl_curves.csv", "discpower_summary.csv")


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    cwd = os.getcwd()
    os.chdir(HERE / "data")
    try:
        common = ["--qrels", "qrels.txt", "--runs", "runs", "--metrics", "all", "--inst-t", "2.25",
                  "--B", "200", "--hsd-trials", "500", "--seed", "42", "--out", str(out)]
        assert main(["consistency", *common]) == 0
        assert main(["discpower", *common]) == 0
    finally:
        os.chdir(cwd)
    if os.environ.get("CWLA_REGEN_GOLDEN"):
        for name in GOLDEN_FILES:
            (HERE / "golden" / name).write_bytes((out / name).read_bytes())
    return out


def _split(path):
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.reader(ln for ln in lines if not ln.startswith("#")))
    return header, rows


def _same_cells(got, want):
    assert len(got) == len(want)
    for row_got, row_want in zip(got, want):
        assert len(row_got) == len(row_want)
        for a, b in zip(row_got, row_want):
            try:
                assert float(a) == pytest.approx(float(b), abs=1e-9)
            except ValueError:
                assert a == b


@pytest.mark.acceptance(8, GOLDEN)
@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_matches_golden_file(golden_run, name):
    got_header, got_rows = _split(golden_run / name)
    want_header, want_rows = _split(HERE / "golden" / name)
    assert got_header == want_header
    assert got_rows[0] == want_rows[0]
    _same_cells(got_rows[1:], want_rows[1:])


@pytest.mark.acceptance(8, GOLDEN)
def test_consistency_summary_layout(golden_run):
    _, rows = _split(golden_run / "consistency_summary.csv")
    assert rows[0] == ["model", "rank", "metric", "aggregation", "canonical", "mean_tau_3dp", "mean_tau",
                       "outperforms", "tie_trials"]
    blocks: dict[str, list[list[str]]] = {}
    for row in rows[1:]:
        blocks.setdefault(row[0], []).append(row)
    assert list(blocks) == ["precision@10", "dcg@10", "rbp@0.8", "inst@2.25", "ap", "err"]
    for model, block in blocks.items():
        static = model.split("@")[0] in {k.value for k in STATIC_MODELS}
        assert len(block) == (6 if static else 7)
        assert [int(r[1]) for r in block] == list(range(1, len(block) + 1))
        assert sum(r[4] == "*" for r in block) == 1
        means = [float(r[6]) for r in block]
        assert means == sorted(means, reverse=True)
        assert all(r[5] == f"{float(r[6]):.3f}" for r in block)
        assert all(0 <= int(r[7]) < len(block) for r in block)
        assert {r[3] for r in block} <= {k.value for k in AggKind}


@pytest.mark.acceptance(8, GOLDEN)
def test_asl_curves_layout(golden_run):
    _, rows = _split(golden_run / "asl_curves.csv")
    assert rows[0] == ["model", "metric", "aggregation", "canonical", "pair_index", "asl"]
    curves: dict[str, list[tuple[int, float]]] = {}
    for row in rows[1:]:
        curves.setdefault(row[1], []).append((int(row[4]), float(row[5])))
    assert len(curves) == 39
    n_runs = len(list((HERE / "data" / "runs").iterdir()))
    for points in curves.values():
        assert [x for x, _ in points] == list(range(1, n_runs * (n_runs - 1) // 2 + 1))
        asl = [y for _, y in points]
        assert asl == sorted(asl) and 0 <= asl[0] and asl[-1] <= 1
