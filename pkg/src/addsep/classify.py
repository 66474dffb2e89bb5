"""Separability classifiers 1-8: scoring, no-false-positive thresholds, accuracy, reports.

Classifiers 1-4 are the finite-difference scores of :mod:`addsep.finite_diff`.
Classifiers 5-8 average the absolute instantaneous mixed partial over the
test set, computed by nested autodiff in either order (5, 6), by the full
autodiff Hessian (7), or by the derivative network (8).  In oracle mode the
analytic function is scored instead of a surrogate; there classifiers 5-8 all
use the symbolic mixed partial.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff
from .derivative_net import build_derivative_network, eval_mixed_partial_batch
from .errors import AddsepError, NoNegatives
from .finite_diff import default_context, score_fd
from .funcgen import Label, SamplingConfig, SymbolicFunction, build_grid_testset, eval_partial
from .mlp import Mlp, atomic_write_text

log = logging.getLogger(__name__)

METHODS = (1, 2, 3, 4, 5, 6, 7, 8)
THRESHOLD_NOTE = "thresholds are fitted on the same functions the accuracy is reported on (no held-out split)"


@dataclass(frozen=True)
class ScoreRecord:
    function_id: str
    method: int
    score: float
    wall_time: float
    label: Label
    signed_score: float = math.nan


@dataclass(frozen=True)
class MethodSummary:
    method: int
    threshold: float
    accuracy: float
    mean_time: float
    n: int
    true_pos: int
    true_neg: int
    false_pos: int
    false_neg: int


@dataclass
class EvaluationReport:
    records: list[ScoreRecord]
    summaries: dict[int, MethodSummary]
    failures: list[tuple[str, int, str]] = field(default_factory=list)
    oracle: bool = False
    note: str = THRESHOLD_NOTE


def classify(score: float, threshold: float) -> Label:
    return Label.SEPARABLE if score <= threshold else Label.NON_SEPARABLE


def optimal_threshold(records: Iterable[ScoreRecord]) -> float:
    """Largest separable score strictly below every non-separable score, else 0.

    Any threshold in the gap between that score and the smallest
    non-separable score gives the same classifications, so this choice is
    canonical.  If a non-separable record scores exactly 0 no non-negative
    threshold avoids a false positive; 0 is returned and a warning logged.
    """
    records = list(records)
    neg = [r.score for r in records if r.label is Label.NON_SEPARABLE]
    if not neg:
        raise NoNegatives("threshold needs at least one non-separable record")
    floor = min(neg)
    below = [r.score for r in records if r.label is Label.SEPARABLE and r.score < floor]
    if floor <= 0.0:
        log.warning("a non-separable function scored %r; zero false positives is unattainable", floor)
    return max(below) if below else 0.0


def confusion(records: Iterable[ScoreRecord], threshold: float) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) with "separable" as the positive class."""
    tp = tn = fp = fn = 0
    for r in records:
        predicted = classify(r.score, threshold)
        if predicted is Label.SEPARABLE:
            if r.label is Label.SEPARABLE:
                tp += 1
            else:
                fp += 1
        elif r.label is Label.NON_SEPARABLE:
            tn += 1
        else:
            fn += 1
    return tp, tn, fp, fn


def accuracy(records: Sequence[ScoreRecord], threshold: float) -> float:
    if not records:
        raise ValueError("accuracy of an empty record set")
    tp, tn, fp, fn = confusion(records, threshold)
    return (tp + tn) / (tp + tn + fp + fn)


def summarize(records: Sequence[ScoreRecord], method: int) -> MethodSummary:
    mine = [r for r in records if r.method == method]
    t = optimal_threshold(mine)
    tp, tn, fp, fn = confusion(mine, t)
    return MethodSummary(
        method=method,
        threshold=t,
        accuracy=(tp + tn) / len(mine),
        mean_time=float(np.mean([r.wall_time for r in mine])),
        n=len(mine),
        true_pos=tp,
        true_neg=tn,
        false_pos=fp,
        false_neg=fn,
    )


# -- scoring ----------------------------------------------------------------


def held_points(testset, i: int, j: int) -> np.ndarray:
    """Test points with every coordinate except ``i`` and ``j`` pinned to the test-set median."""
    t = np.array(testset, dtype=np.float64)
    ctx = default_context(t)
    keep = np.zeros(t.shape[1], dtype=bool)
    keep[[i, j]] = True
    t[:, ~keep] = ctx[~keep]
    return t


def instantaneous_values(method: int, target, points, i: int, j: int) -> np.ndarray:
    """Per-point mixed partials for classifiers 5-8."""
    if isinstance(target, SymbolicFunction):
        order = (j, i) if method == 6 else (i, j)
        return np.array([eval_partial(target.expr, p, order) for p in points])
    if method == 5:
        return np.array([autodiff.mixed_partial_nested(target, p, i, j) for p in points])
    if method == 6:
        return np.array([autodiff.mixed_partial_nested(target, p, j, i) for p in points])
    if method == 7:
        return np.array([autodiff.hessian(target, p)[i, j] for p in points])
    if method == 8:
        return eval_mixed_partial_batch(build_derivative_network(target, i, j), points)
    raise ValueError(f"unknown method {method}")


def score(method: int, target, testset, i: int = 0, j: int = 1) -> tuple[float, float]:
    """``(mean |mixed partial|, signed mean)`` of one classifier on a surrogate or analytic function."""
    if method in (1, 2, 3, 4):
        s = score_fd(target, testset, method, i, j)
        return s.score, s.signed
    values = instantaneous_values(method, target, held_points(testset, i, j), i, j)
    return float(np.mean(np.abs(values))), float(np.mean(values))


def score_function(f: SymbolicFunction, target, methods: Sequence[int],
                   sampling: SamplingConfig = SamplingConfig()):
    """Score every requested method for one corpus function; failures are returned, not raised."""
    testset = build_grid_testset(f, sampling)
    i, j = f.tested_pair
    records, failures = [], []
    for m in methods:
        t0 = time.perf_counter()
        try:
            s, signed = score(m, target, testset, i, j)
        except AddsepError as exc:
            failures.append((f.id, m, f"{type(exc).__name__}: {exc}"))
            continue
        elapsed = time.perf_counter() - t0
        if not math.isfinite(s):
            failures.append((f.id, m, f"non-finite score {s}"))
            continue
        records.append(ScoreRecord(f.id, m, s, elapsed, f.label, signed))
    return records, failures


def _score_job(args):
    return score_function(*args)


def run_evaluation(corpus: Sequence[SymbolicFunction], surrogates: Mapping[str, Mlp] | None,
                   methods: Sequence[int] = METHODS, workers: int = 1,
                   sampling: SamplingConfig = SamplingConfig()) -> EvaluationReport:
    """Score every function with every method and summarise per method.

    ``surrogates=None`` selects oracle mode.  Work is split per function;
    results are gathered in corpus order, so the report does not depend on
    ``workers``.
    """
    methods = sorted(set(methods))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    oracle = surrogates is None
    jobs = [(f, f if oracle else surrogates[f.id], methods, sampling) for f in corpus]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_score_job(job) for job in jobs]
    records = [r for recs, _ in results for r in recs]
    failures = [x for _, fails in results for x in fails]
    for fid, m, msg in failures:
        log.warning("function %s, method %d excluded: %s", fid, m, msg)
    summaries = {}
    for m in methods:
        mine = [r for r in records if r.method == m]
        if any(r.label is Label.NON_SEPARABLE for r in mine):
            summaries[m] = summarize(records, m)
    return EvaluationReport(records, summaries, failures, oracle)


# -- report files ---------------------------------------------------------------

SCORE_HEADER = ("function_id", "method", "score", "wall_time_s", "label", "prediction")
SUMMARY_HEADER = ("method", "threshold", "accuracy", "mean_time_s")


def _g(x: float) -> str:
    return f"{x:.6g}"


def scores_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for r in report.records:
        s = report.summaries.get(r.method)
        pred = classify(r.score, s.threshold).value if s else ""
        w.writerow((r.function_id, r.method, _g(r.score), _g(r.wall_time), r.label.value, pred))
    return buf.getvalue()


def summary_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for m in sorted(report.summaries):
        s = report.summaries[m]
        w.writerow((m, _g(s.threshold), _g(s.accuracy), _g(s.mean_time)))
    return buf.getvalue()


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "note": report.note,
        "oracle": report.oracle,
        "summaries": [asdict(report.summaries[m]) for m in sorted(report.summaries)],
        "records": [
            {**asdict(r), "label": r.label.value} for r in report.records
        ],
        "failures": [{"function_id": f, "method": m, "error": e} for f, m, e in report.failures],
    }


def write_report(report: EvaluationReport, out_dir) -> None:
    out = Path(out_dir)
    atomic_write_text(out / "scores.csv", scores_csv(report))
    atomic_write_text(out / "summary.csv", summary_csv(report))
    atomic_write_text(out / "report.json", json.dumps(report_to_dict(report), indent=1) + "\n")


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows
