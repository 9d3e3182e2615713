"""Subsequence DTW backend: templates, cosine costs, path search, detections.

A whole template (rows) is matched against any contiguous stretch of a longer
query (columns). Paths may start at any column in row 0 and advance with the
step sizes (2,1), (1,1) and (1,2); each visited cell contributes its cost.
Scores are negated accumulated costs normalized by the number of path cells,
so one score per possible end column falls out of a single DP sweep.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericDomainError, ParameterError

# Backtracking preference when several predecessors tie: diagonal first.
STEP_PRIORITY = ((1, 1), (2, 1), (1, 2))


@dataclass(frozen=True)
class Template:
    """Reference pattern for one training sample (or a query's feature matrix)."""

    frames: np.ndarray                # (L, D)
    keyword: str
    source_duration_s: float
    frame_hop_s: float

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ParameterError("template needs at least one frame")


@dataclass(frozen=True)
class PathResult:
    end_col: int
    acc_cost: float
    path_len: int
    start_col: int


@dataclass(frozen=True)
class Candidate:
    """Thresholded match before overlap resolution."""

    keyword: str
    onset_s: float
    offset_s: float
    score: float
    source_duration_s: float
    template_id: int = 0


@dataclass(frozen=True)
class Detection:
    keyword: str
    onset_s: float
    offset_s: float
    score: float


def assemble_template(segment_embeddings, keyword: str = "",
                      source_duration_s: float = 0.0,
                      frame_hop_s: float = 256 / 16000) -> Template:
    """Average per-segment embeddings onto a common frame grid.

    ``segment_embeddings`` is a sequence of (frames (T, D), start_index)
    pairs; grid cell g becomes the mean of every segment row that lands on
    it. With the inference hop of one embedding frame the grid is gapless.
    """
    segment_embeddings = list(segment_embeddings)
    if not segment_embeddings:
        raise ParameterError("cannot assemble a template from zero segments")
    length = max(start + len(emb) for emb, start in segment_embeddings)
    dim = segment_embeddings[0][0].shape[1]
    sums = np.zeros((length, dim))
    counts = np.zeros(length)
    for emb, start in segment_embeddings:
        if start < 0:
            raise ParameterError("segment start indices must be >= 0")
        sums[start:start + len(emb)] += emb
        counts[start:start + len(emb)] += 1
    if np.any(counts == 0):
        raise ParameterError("segment placement leaves gaps in the template grid")
    return Template(frames=sums / counts[:, None], keyword=keyword,
                    source_duration_s=source_duration_s, frame_hop_s=frame_hop_s)


def cost_matrix(template: Template | np.ndarray, query: Template | np.ndarray) -> np.ndarray:
    """Pairwise cosine distance, entries in [0, 2]."""
    a = template.frames if isinstance(template, Template) else np.asarray(template)
    b = query.frames if isinstance(query, Template) else np.asarray(query)
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericDomainError("zero-norm frame has no cosine direction")
    cos = (a / na[:, None]) @ (b / nb[:, None]).T
    return np.clip(1.0 - cos, 0.0, 2.0)


def _shift(row: np.ndarray, by: int, fill) -> np.ndarray:
    out = np.full_like(row, fill)
    if by < len(row):
        out[by:] = row[:len(row) - by]
    return out


def subsequence_dtw_tables(cost: np.ndarray):
    """Row-sweep DP over the full matrix.

    Returns (acc, path_len, start_col) where acc[n] is the accumulated cost
    of the best path ending at (M-1, n) (inf when unreachable), path_len[n]
    counts the cells of the path backtracking would select, and start_col[n]
    is its row-0 column. Tie-breaks follow STEP_PRIORITY.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ParameterError("cost matrix must be 2-D and non-empty")
    m, n = cost.shape
    inf = np.inf

    acc_prev2 = None
    acc_prev = cost[0].copy()
    len_prev2 = None
    len_prev = np.ones(n, dtype=np.int64)
    start_prev2 = None
    start_prev = np.arange(n, dtype=np.int64)

    for i in range(1, m):
        d11 = _shift(acc_prev, 1, inf)
        d12 = _shift(acc_prev, 2, inf)
        d21 = _shift(acc_prev2, 1, inf) if acc_prev2 is not None else np.full(n, inf)
        best = np.minimum(np.minimum(d11, d21), d12)
        reachable = np.isfinite(best)
        acc_row = np.where(reachable, cost[i] + best, inf)

        sel11 = d11 == best
        sel21 = ~sel11 & (d21 == best)
        l11 = _shift(len_prev, 1, 0)
        l12 = _shift(len_prev, 2, 0)
        l21 = _shift(len_prev2, 1, 0) if len_prev2 is not None else np.zeros(n, dtype=np.int64)
        len_row = np.where(reachable,
                           np.where(sel11, l11, np.where(sel21, l21, l12)) + 1, 0)
        s11 = _shift(start_prev, 1, -1)
        s12 = _shift(start_prev, 2, -1)
        s21 = _shift(start_prev2, 1, -1) if start_prev2 is not None else np.full(n, -1)
        start_row = np.where(reachable,
                             np.where(sel11, s11, np.where(sel21, s21, s12)), -1)

        acc_prev2, acc_prev = acc_prev, acc_row
        len_prev2, len_prev = len_prev, len_row
        start_prev2, start_prev = start_prev, start_row

    return acc_prev, len_prev, start_prev


def subsequence_dtw(cost: np.ndarray) -> list[PathResult | None]:
    """One PathResult per end column; None marks unreachable end cells."""
    acc, plen, start = subsequence_dtw_tables(cost)
    out: list[PathResult | None] = []
    for n in range(len(acc)):
        if not np.isfinite(acc[n]):
            out.append(None)
        else:
            out.append(PathResult(end_col=n, acc_cost=float(acc[n]),
                                  path_len=int(plen[n]), start_col=int(start[n])))
    return out


def subsequence_dtw_reference(cost: np.ndarray):
    """Sequential scalar DP plus explicit backtracking (the reference order).

    Returns (acc, path_len, start_col, paths) with paths[n] the list of
    (row, col) cells, or None when (M-1, n) is unreachable.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    d = np.full((m, n), np.inf)
    d[0] = cost[0]
    for i in range(1, m):
        for j in range(n):
            best = np.inf
            for dr, dc in STEP_PRIORITY:
                pi, pj = i - dr, j - dc
                if pi >= 0 and pj >= 0 and d[pi, pj] < best:
                    best = d[pi, pj]
            if np.isfinite(best):
                d[i, j] = cost[i, j] + best

    acc = d[m - 1].copy()
    plen = np.zeros(n, dtype=np.int64)
    start = np.full(n, -1, dtype=np.int64)
    paths: list[list[tuple[int, int]] | None] = []
    for end in range(n):
        if not np.isfinite(acc[end]):
            paths.append(None)
            continue
        i, j = m - 1, end
        path = [(i, j)]
        while i > 0:
            best = np.inf
            for dr, dc in STEP_PRIORITY:
                pi, pj = i - dr, j - dc
                if pi >= 0 and pj >= 0 and d[pi, pj] < best:
                    best = d[pi, pj]
            for dr, dc in STEP_PRIORITY:
                pi, pj = i - dr, j - dc
                if pi >= 0 and pj >= 0 and d[pi, pj] == best:
                    i, j = pi, pj
                    break
            path.append((i, j))
        path.reverse()
        plen[end] = len(path)
        start[end] = path[0][1]
        paths.append(path)
    return acc, plen, start, paths


def subsequence_dtw_antidiagonal(cost: np.ndarray):
    """Wavefront evaluation over anti-diagonals (i + j constant).

    Cell dependencies only point to strictly smaller anti-diagonals, so each
    wavefront can be evaluated in parallel; results are bit-identical to the
    sequential order because min and the tie-break are per-cell operations.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    inf = np.inf
    acc = np.full((m, n), inf)
    plen = np.zeros((m, n), dtype=np.int64)
    start = np.full((m, n), -1, dtype=np.int64)
    acc[0] = cost[0]
    plen[0] = 1
    start[0] = np.arange(n)

    def gather(rows, cols):
        ok = (rows >= 0) & (cols >= 0)
        r = np.where(ok, rows, 0)
        c = np.where(ok, cols, 0)
        return (np.where(ok, acc[r, c], inf),
                np.where(ok, plen[r, c], 0),
                np.where(ok, start[r, c], -1))

    for diag in range(1, m + n - 1):
        i = np.arange(max(1, diag - n + 1), min(m, diag + 1))
        if len(i) == 0:
            continue
        j = diag - i
        a11, l11, s11 = gather(i - 1, j - 1)
        a21, l21, s21 = gather(i - 2, j - 1)
        a12, l12, s12 = gather(i - 1, j - 2)
        best = np.minimum(np.minimum(a11, a21), a12)
        reachable = np.isfinite(best)
        sel11 = a11 == best
        sel21 = ~sel11 & (a21 == best)
        acc[i, j] = np.where(reachable, cost[i, j] + best, inf)
        plen[i, j] = np.where(reachable,
                              np.where(sel11, l11, np.where(sel21, l21, l12)) + 1, 0)
        start[i, j] = np.where(reachable,
                               np.where(sel11, s11, np.where(sel21, s21, s12)), -1)

    return acc[m - 1], plen[m - 1], start[m - 1]


def dtw_full_alignment_cost(cost: np.ndarray) -> float:
    """Fixed-endpoint variant: best path from (0, 0) to (M-1, N-1)."""
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    d = np.full((m, n), np.inf)
    d[0, 0] = cost[0, 0]
    for i in range(1, m):
        for j in range(n):
            best = np.inf
            for dr, dc in STEP_PRIORITY:
                pi, pj = i - dr, j - dc
                if pi >= 0 and pj >= 0 and d[pi, pj] < best:
                    best = d[pi, pj]
            if np.isfinite(best):
                d[i, j] = cost[i, j] + best
    return float(d[m - 1, n - 1])


def match_scores(template: Template, query: Template):
    """Per-end-column normalized scores for one (template, query) pair.

    Returns (scores, start_cols); unreachable columns carry -inf.
    """
    acc, plen, start = subsequence_dtw_tables(cost_matrix(template, query))
    scores = np.where(plen > 0, -acc / np.maximum(plen, 1), -np.inf)
    return scores, start


def extract_candidates(scores: np.ndarray, start_cols: np.ndarray, threshold: float,
                       hop_s: float, keyword: str, source_duration_s: float,
                       template_id: int = 0) -> list[Candidate]:
    """Candidates above threshold, merged per run.

    Runs of consecutive above-threshold end columns sharing the same start
    column collapse to their best-scoring column (ties to the earliest).
    """
    above = scores > threshold
    idx = np.flatnonzero(above)
    if idx.size == 0:
        return []
    new_run = np.ones(len(scores), dtype=bool)
    new_run[1:] = (~above[:-1]) | (start_cols[1:] != start_cols[:-1])
    run_id = np.cumsum(new_run)
    order = np.lexsort((-idx, scores[idx], run_id[idx]))
    sorted_idx = idx[order]
    sorted_rid = run_id[idx][order]
    is_last = np.ones(len(order), dtype=bool)
    is_last[:-1] = sorted_rid[1:] != sorted_rid[:-1]
    best_cols = sorted_idx[is_last]
    return [
        Candidate(keyword=keyword,
                  onset_s=float(start_cols[col] * hop_s),
                  offset_s=float(col * hop_s),
                  score=float(scores[col]),
                  source_duration_s=source_duration_s,
                  template_id=template_id)
        for col in np.sort(best_cols)
    ]


def resolve_overlaps(candidates: list[Candidate]) -> list[Candidate]:
    """Keep at most one detection per time instant.

    Candidates are processed in descending score order (ties: earlier onset,
    then keyword name); each is truncated to the time not yet claimed.
    Candidates whose remainder is empty or split in two are dropped; kept
    scores are never altered by truncation.
    """
    order = sorted(candidates, key=lambda c: (-c.score, c.onset_s, c.keyword))
    claimed_starts: list[float] = []
    claimed: list[tuple[float, float]] = []
    kept = []
    for cand in order:
        span = _subtract_claimed(cand.onset_s, cand.offset_s, claimed)
        if span is None:
            continue
        s, e = span
        pos = bisect.bisect_left(claimed_starts, s)
        claimed_starts.insert(pos, s)
        claimed.insert(pos, (s, e))
        kept.append(Candidate(keyword=cand.keyword, onset_s=s, offset_s=e,
                              score=cand.score,
                              source_duration_s=cand.source_duration_s,
                              template_id=cand.template_id))
    kept.sort(key=lambda c: (c.onset_s, c.offset_s, c.keyword))
    return kept


def _subtract_claimed(s: float, e: float, claimed) -> tuple[float, float] | None:
    """Remove claimed intervals from [s, e); None unless one piece remains."""
    if e <= s:
        return None
    pieces = [(s, e)]
    for cs, ce in claimed:
        nxt = []
        for ps, pe in pieces:
            if ce <= ps or cs >= pe:
                nxt.append((ps, pe))
                continue
            if ps < cs:
                nxt.append((ps, cs))
            if ce < pe:
                nxt.append((ce, pe))
        pieces = nxt
        if len(pieces) > 1:
            return None
        if not pieces:
            return None
    return pieces[0]


def filter_short(candidates: list[Candidate], min_dur_fraction: float) -> list[Candidate]:
    """Drop detections shorter than the fraction of their training sample."""
    return [c for c in candidates
            if c.offset_s - c.onset_s >= min_dur_fraction * c.source_duration_s]


def detect(templates: list[Template], query: Template,
           thresholds: dict[str, float] | float,
           min_dur_fraction: float = 0.5) -> list[Detection]:
    """Full backend: score every template, threshold, resolve, length-filter."""
    candidates: list[Candidate] = []
    for tid, template in enumerate(templates):
        if isinstance(thresholds, dict):
            if template.keyword not in thresholds:
                raise ConfigError(f"no threshold for keyword {template.keyword!r}")
            thr = thresholds[template.keyword]
        else:
            thr = float(thresholds)
        scores, starts = match_scores(template, query)
        candidates.extend(extract_candidates(
            scores, starts, thr, query.frame_hop_s, template.keyword,
            template.source_duration_s, template_id=tid))
    resolved = filter_short(resolve_overlaps(candidates), min_dur_fraction)
    return [Detection(keyword=c.keyword, onset_s=c.onset_s, offset_s=c.offset_s,
                      score=c.score) for c in resolved]


def candidate_pool(templates: list[Template], query: Template,
                   pool_size_per_keyword: int | None = None,
                   min_dur_fraction: float = 0.0) -> list[Candidate]:
    """Unthresholded candidates for threshold tuning.

    Extraction runs with threshold -inf. Candidates already shorter than the
    length floor can never survive detection (truncation only shrinks), so
    they are dropped up front; optionally only the best
    ``pool_size_per_keyword`` of each keyword are kept so tuning grids stay
    tractable.
    """
    by_keyword: dict[str, list[Candidate]] = {}
    for tid, template in enumerate(templates):
        scores, starts = match_scores(template, query)
        cands = extract_candidates(scores, starts, -np.inf, query.frame_hop_s,
                                   template.keyword, template.source_duration_s,
                                   template_id=tid)
        by_keyword.setdefault(template.keyword, []).extend(cands)
    pool = []
    for kw, cands in sorted(by_keyword.items()):
        cands = filter_short(cands, min_dur_fraction)
        cands.sort(key=lambda c: (-c.score, c.onset_s))
        if pool_size_per_keyword is not None:
            cands = cands[:pool_size_per_keyword]
        pool.extend(cands)
    return pool
