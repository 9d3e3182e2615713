"""Keyword and relative-position training targets.

Every training sample is a sequence of segments. The keyword head gets a
one-hot (or Mixup-mixed) distribution over classes; the position head gets a
soft label that is uniform over the segment's active interval of relative
positions, or uniform everywhere for reversed and no-speech segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

NO_SPEECH = "no_speech"
REVERSED_SUFFIX = "~rev"


@dataclass(frozen=True)
class KeywordLabelSpace:
    """Class index layout: base keywords, then reversed classes, then no-speech."""

    keywords: tuple[str, ...]
    with_reversed: bool = True

    def __post_init__(self):
        if len(set(self.keywords)) != len(self.keywords):
            raise ParameterError("keyword names must be unique")
        if NO_SPEECH in self.keywords:
            raise ParameterError(f"{NO_SPEECH!r} is reserved for the no-speech class")

    @property
    def n_base(self) -> int:
        return len(self.keywords)

    @property
    def n_classes(self) -> int:
        return (2 * self.n_base if self.with_reversed else self.n_base) + 1

    @property
    def class_names(self) -> tuple[str, ...]:
        names = list(self.keywords)
        if self.with_reversed:
            names += [kw + REVERSED_SUFFIX for kw in self.keywords]
        return tuple(names + [NO_SPEECH])

    def index(self, keyword: str) -> int:
        return self.keywords.index(keyword)

    def reversed_index(self, keyword: str) -> int:
        if not self.with_reversed:
            raise ParameterError("label space was built without reversed classes")
        return self.n_base + self.keywords.index(keyword)

    @property
    def no_speech_index(self) -> int:
        return self.n_classes - 1

    def one_hot(self, class_index: int) -> np.ndarray:
        y = np.zeros(self.n_classes)
        y[class_index] = 1.0
        return y

    def to_dict(self) -> dict:
        return {"keywords": list(self.keywords), "with_reversed": self.with_reversed}

    @classmethod
    def from_dict(cls, d: dict) -> "KeywordLabelSpace":
        return cls(keywords=tuple(d["keywords"]), with_reversed=bool(d["with_reversed"]))


@dataclass(frozen=True)
class SegmentLabel:
    """Targets for one training segment (both distributions sum to 1)."""

    y_kw: np.ndarray
    y_pos: np.ndarray
    sample_id: int
    segment_index: int


def active_interval(n_seg: int, i_seg: int, n_pos: int) -> tuple[int, int]:
    """1-based inclusive position interval assigned to segment i_seg of n_seg.

    The intervals for i_seg = 1..n_seg partition [1, n_pos].
    """
    if n_seg < 1 or n_pos < 1:
        raise ParameterError("segment and position counts must be >= 1")
    if not 1 <= i_seg <= n_seg:
        raise ParameterError(f"i_seg {i_seg} out of range [1, {n_seg}]")
    if n_seg > n_pos:
        raise ParameterError(
            f"sample has {n_seg} segments but only {n_pos} position classes; "
            "samples longer than the longest training sample are rejected")
    lo = 1 + math.ceil((i_seg - 1) * n_pos / n_seg)
    hi = math.ceil(i_seg * n_pos / n_seg)
    return lo, hi


def positional_label(interval_or_special, n_pos: int) -> np.ndarray:
    """Uniform mass over an interval, or uniform everywhere for specials.

    ``interval_or_special`` is a (lo, hi) 1-based inclusive pair, or one of
    the strings "reversed" / "no_speech".
    """
    if n_pos < 1:
        raise ParameterError("n_pos must be >= 1")
    y = np.zeros(n_pos)
    if interval_or_special in ("reversed", "no_speech"):
        y[:] = 1.0 / n_pos
        return y
    lo, hi = interval_or_special
    if not (1 <= lo <= hi <= n_pos):
        raise ParameterError(f"interval [{lo}, {hi}] invalid for n_pos={n_pos}")
    y[lo - 1:hi] = 1.0 / (hi - lo + 1)
    return y


@dataclass(frozen=True)
class TrainingItem:
    """One segment's features and targets; the unit the loss consumes."""

    features: np.ndarray              # (T, n_mels) log-Mel frames
    label: SegmentLabel


def augment_reversed(items: list[TrainingItem], space: KeywordLabelSpace,
                     next_sample_id: int | None = None) -> list[TrainingItem]:
    """Append a time-reversed copy of every keyword segment.

    Reversal flips the feature frames along time; the copy gets the
    keyword's reversed class and a uniform positional label. No-speech
    segments are left alone and originals are never modified.
    """
    if not space.with_reversed:
        raise ParameterError("label space was built without reversed classes")
    if next_sample_id is None:
        next_sample_id = 1 + max((it.label.sample_id for it in items), default=-1)
    n_pos = len(items[0].label.y_pos) if items else 0

    out = list(items)
    sample_map: dict[int, int] = {}
    for item in items:
        cls = int(np.argmax(item.label.y_kw))
        if cls >= space.n_base:          # no-speech (or already reversed)
            continue
        sid = item.label.sample_id
        if sid not in sample_map:
            sample_map[sid] = next_sample_id
            next_sample_id += 1
        label = SegmentLabel(
            y_kw=space.one_hot(space.n_base + cls),
            y_pos=positional_label("reversed", n_pos),
            sample_id=sample_map[sid],
            segment_index=item.label.segment_index,
        )
        out.append(TrainingItem(features=item.features[::-1].copy(), label=label))
    return out


def oversample_plan(class_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Index multiset that balances all classes up to the largest one.

    Every original index appears exactly once; the remainder of each class
    is filled with uniform draws (with replacement) from that class.
    """
    class_ids = np.asarray(class_ids)
    if class_ids.size == 0:
        raise ParameterError("cannot oversample an empty corpus")
    classes, counts = np.unique(class_ids, return_counts=True)
    target = counts.max()
    plan = [np.arange(len(class_ids))]
    for cls, count in zip(classes, counts):
        if count < target:
            pool = np.flatnonzero(class_ids == cls)
            plan.append(rng.choice(pool, size=target - count, replace=True))
    return np.concatenate(plan)


def mixup_pair(item_a: TrainingItem, item_b: TrainingItem, lam: float) -> TrainingItem:
    """Mix features and both label heads with the same coefficient."""
    label = SegmentLabel(
        y_kw=lam * item_a.label.y_kw + (1 - lam) * item_b.label.y_kw,
        y_pos=lam * item_a.label.y_pos + (1 - lam) * item_b.label.y_pos,
        sample_id=item_a.label.sample_id,
        segment_index=item_a.label.segment_index,
    )
    return TrainingItem(features=lam * item_a.features + (1 - lam) * item_b.features,
                        label=label)
