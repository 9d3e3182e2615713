"""Event-based micro-averaged scoring and validation-set threshold tuning.

A detection matches a reference of the same file and keyword when its onset
lies within a 0.2 s collar and its offset within max(0.2 s, half the
reference duration). Counts are pooled over all events before any division
(micro averaging).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dtw import Candidate, Detection, filter_short, resolve_overlaps
from .errors import ParameterError

log = logging.getLogger(__name__)

ONSET_COLLAR_S = 0.2
OFFSET_COLLAR_S = 0.2
OFFSET_COLLAR_FRACTION = 0.5


@dataclass(frozen=True)
class EventAnnotation:
    file: str
    onset_s: float
    offset_s: float
    keyword: str

    def __post_init__(self):
        if not self.onset_s < self.offset_s:
            raise ParameterError(
                f"event {self.keyword!r} in {self.file!r}: onset must precede offset")


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall,
                "f_score": self.f_score}


def read_annotations(path: str | Path) -> list[EventAnnotation]:
    """Annotation TSV: file, onset_s, offset_s, keyword (header row)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        required = {"file", "onset_s", "offset_s", "keyword"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ParameterError(f"{path}: annotation TSV needs columns {sorted(required)}")
        for row in reader:
            try:
                rows.append(EventAnnotation(file=row["file"],
                                            onset_s=float(row["onset_s"]),
                                            offset_s=float(row["offset_s"]),
                                            keyword=row["keyword"]))
            except (TypeError, ValueError) as exc:
                raise ParameterError(f"{path}: malformed row {row}: {exc}") from exc
    return rows


def write_annotations(path: str | Path, events: list[EventAnnotation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["file", "onset_s", "offset_s", "keyword"])
        for ev in events:
            writer.writerow([ev.file, f"{ev.onset_s:.6f}", f"{ev.offset_s:.6f}", ev.keyword])


def _matches(ref: EventAnnotation, det) -> bool:
    offset_collar = max(OFFSET_COLLAR_S,
                        OFFSET_COLLAR_FRACTION * (ref.offset_s - ref.onset_s))
    return (abs(det.onset_s - ref.onset_s) <= ONSET_COLLAR_S
            and abs(det.offset_s - ref.offset_s) <= offset_collar)


def match_events(refs: list[EventAnnotation],
                 dets: list[EventAnnotation]) -> tuple[int, int, int]:
    """Greedy one-to-one matching per (file, keyword); returns (tp, fp, fn).

    References are visited in onset order; each takes the earliest-onset
    unmatched detection satisfying the collars.
    """
    groups: dict[tuple[str, str], tuple[list, list]] = {}
    for ref in refs:
        groups.setdefault((ref.file, ref.keyword), ([], []))[0].append(ref)
    for det in dets:
        groups.setdefault((det.file, det.keyword), ([], []))[1].append(det)

    tp = 0
    for key in groups:
        g_refs, g_dets = groups[key]
        g_refs.sort(key=lambda e: (e.onset_s, e.offset_s))
        g_dets.sort(key=lambda e: (e.onset_s, e.offset_s))
        taken = [False] * len(g_dets)
        for ref in g_refs:
            for i, det in enumerate(g_dets):
                if not taken[i] and _matches(ref, det):
                    taken[i] = True
                    tp += 1
                    break
    fp = len(dets) - tp
    fn = len(refs) - tp
    return tp, fp, fn


def micro_f1(tp: int, fp: int, fn: int) -> MetricsReport:
    """Micro-averaged precision/recall/F from pooled counts.

    The degenerate all-empty case (tp = fp = fn = 0) is scored as perfect.
    """
    if min(tp, fp, fn) < 0:
        raise ParameterError("counts must be non-negative")
    if tp == 0 and fp == 0 and fn == 0:
        return MetricsReport(tp=0, fp=0, fn=0, precision=1.0, recall=1.0, f_score=1.0)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall,
                         f_score=f)


def detections_to_events(dets_by_file: dict[str, list[Detection]]) -> list[EventAnnotation]:
    return [EventAnnotation(file=f, onset_s=d.onset_s, offset_s=d.offset_s,
                            keyword=d.keyword)
            for f, ds in dets_by_file.items() for d in ds]


def evaluate_thresholds(pool_by_file: dict[str, list[Candidate]],
                        refs: list[EventAnnotation],
                        thresholds: dict[str, float],
                        min_dur_fraction: float) -> MetricsReport:
    """Run the threshold + resolution + length-filter pipeline on a pool."""
    det_events = []
    for file, pool in pool_by_file.items():
        active = [c for c in pool if c.score > thresholds[c.keyword]]
        resolved = filter_short(resolve_overlaps(active), min_dur_fraction)
        det_events.extend(EventAnnotation(file=file, onset_s=c.onset_s,
                                          offset_s=c.offset_s, keyword=c.keyword)
                          for c in resolved)
    return micro_f1(*match_events(refs, det_events))


def threshold_grid(scores: list[float]) -> list[float]:
    distinct = sorted(set(scores))
    mids = [(a + b) / 2 for a, b in zip(distinct, distinct[1:])]
    return [-math.inf] + mids + [math.inf]


def tune_thresholds(pool_by_file: dict[str, list[Candidate]],
                    refs: list[EventAnnotation], keywords: list[str],
                    mode: str = "global",
                    min_dur_fraction: float = 0.5):
    """Pick the threshold(s) maximizing validation F over the score grid.

    The grid holds the midpoints of the sorted distinct candidate scores
    plus -inf/+inf sentinels; ties go to the highest threshold. Per-keyword
    mode refines the tuned global threshold one keyword at a time (each
    coordinate argmax includes the incumbent, so its F never drops below
    the global optimum). Returns (thresholds dict, best MetricsReport).
    """
    if mode not in ("global", "per_keyword"):
        raise ParameterError(f"unknown tuning mode {mode!r}")
    all_scores = [c.score for pool in pool_by_file.values() for c in pool]
    if not all_scores:
        log.warning("no candidates on the validation set; tuning returns +inf")
        thr = {kw: math.inf for kw in keywords}
        report = evaluate_thresholds(pool_by_file, refs, thr, min_dur_fraction)
        return thr, report

    def global_argmax() -> tuple[float, MetricsReport]:
        best_thr, best_report = math.inf, None
        for thr in threshold_grid(all_scores):
            report = evaluate_thresholds(pool_by_file, refs,
                                          {kw: thr for kw in keywords},
                                          min_dur_fraction)
            if (best_report is None or report.f_score > best_report.f_score
                    or (report.f_score == best_report.f_score and thr > best_thr)):
                best_thr, best_report = thr, report
        return best_thr, best_report

    g_thr, g_report = global_argmax()
    thresholds = {kw: g_thr for kw in keywords}
    if mode == "global":
        return thresholds, g_report

    best_report = g_report
    for kw in keywords:
        kw_scores = [c.score for pool in pool_by_file.values() for c in pool
                     if c.keyword == kw]
        best_thr = thresholds[kw]
        for thr in threshold_grid(kw_scores) if kw_scores else [math.inf]:
            trial = dict(thresholds)
            trial[kw] = thr
            report = evaluate_thresholds(pool_by_file, refs, trial, min_dur_fraction)
            if (report.f_score > best_report.f_score
                    or (report.f_score == best_report.f_score and thr > best_thr)):
                best_thr, best_report = thr, report
        thresholds[kw] = best_thr
    return thresholds, best_report
