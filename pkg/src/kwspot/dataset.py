"""Corpus loading, no-speech sampling and the synthetic desk-scale corpus.

Layout expected by :func:`load_corpus`::

    root/
      train/<keyword>/<n>.wav     isolated keyword samples
      val/sentences/*.wav         + val/annotations.tsv
      test/sentences/*.wav        + test/annotations.tsv
      noise/*.wav                 background recordings for the no-speech class

The generator writes exactly this layout from parametric chirp/tone
patterns, so every annotation is sample-accurate by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .config import SAMPLE_RATE
from .errors import LayoutError, ParameterError
from .evaluation import EventAnnotation, read_annotations, write_annotations


@dataclass(frozen=True)
class CorpusLayout:
    root: Path
    keywords: tuple[str, ...]
    train: tuple[tuple[Path, str], ...]          # (wav path, keyword)
    validation_files: tuple[Path, ...]
    validation_events: tuple[EventAnnotation, ...]
    test_files: tuple[Path, ...]
    test_events: tuple[EventAnnotation, ...]
    noise: tuple[Path, ...]

    def split(self, name: str):
        if name == "val":
            return self.validation_files, self.validation_events
        if name == "test":
            return self.test_files, self.test_events
        raise ParameterError(f"unknown split {name!r}")


def load_corpus(root: str | Path) -> CorpusLayout:
    """Validate a corpus directory and index its files."""
    root = Path(root)
    train_dir = root / "train"
    if not train_dir.is_dir():
        raise LayoutError(f"missing split directory: {train_dir}")
    keywords = tuple(sorted(p.name for p in train_dir.iterdir() if p.is_dir()))
    if not keywords:
        raise LayoutError(f"no keyword directories under {train_dir}")
    train = []
    for kw in keywords:
        wavs = sorted((train_dir / kw).glob("*.wav"))
        if not wavs:
            raise LayoutError(f"no training wav files under {train_dir / kw}")
        train.extend((w, kw) for w in wavs)

    splits = {}
    for split in ("val", "test"):
        sent_dir = root / split / "sentences"
        ann_path = root / split / "annotations.tsv"
        if not sent_dir.is_dir():
            raise LayoutError(f"missing split directory: {sent_dir}")
        if not ann_path.is_file():
            raise LayoutError(f"missing annotation file: {ann_path}")
        files = tuple(sorted(sent_dir.glob("*.wav")))
        events = tuple(read_annotations(ann_path))
        known = {f.name for f in files}
        for ev in events:
            if ev.keyword not in keywords:
                raise LayoutError(
                    f"{ann_path}: annotation keyword {ev.keyword!r} has no "
                    f"training directory")
            if ev.file not in known:
                raise LayoutError(f"{ann_path}: annotated file {ev.file!r} not found")
        splits[split] = (files, events)

    noise_dir = root / "noise"
    if not noise_dir.is_dir():
        raise LayoutError(f"missing noise directory: {noise_dir}")
    noise = tuple(sorted(noise_dir.glob("*.wav")))
    if not noise:
        raise LayoutError(f"no wav files under {noise_dir}")

    return CorpusLayout(root=root, keywords=keywords, train=tuple(train),
                        validation_files=splits["val"][0],
                        validation_events=splits["val"][1],
                        test_files=splits["test"][0],
                        test_events=splits["test"][1],
                        noise=noise)


def sample_noise(noise_clips: list[np.ndarray], count: int, seg_len: int,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Draw ``count`` uniform random windows of ``seg_len`` samples."""
    if count < 0:
        raise ParameterError("count must be >= 0")
    usable = [np.asarray(c, dtype=np.float64) for c in noise_clips if len(c) >= seg_len]
    if not usable and count > 0:
        raise ParameterError(f"no noise clip holds {seg_len} samples")
    windows = []
    for _ in range(count):
        clip = usable[int(rng.integers(len(usable)))]
        offset = int(rng.integers(len(clip) - seg_len + 1))
        windows.append(clip[offset:offset + seg_len].copy())
    return windows


# --- synthetic corpus -------------------------------------------------------

@dataclass(frozen=True)
class ToyDatasetSpec:
    n_keywords: int = 3
    shots: int = 5
    n_sentences: int = 40
    noise_level: float = 0.02
    seed: int = 0
    # When set, keywords 0 and 1 become exact time-reversals of one another
    # (useful for probing temporal structure in the embeddings).
    mirrored_pair: bool = False

    def __post_init__(self):
        if self.n_keywords < 2:
            raise ParameterError("need at least two keywords")
        if self.shots < 1:
            raise ParameterError("need at least one shot per keyword")


def keyword_pattern(spec: ToyDatasetSpec, index: int) -> np.ndarray:
    """Deterministic spectro-temporal primitive for keyword ``index``.

    Patterns cycle through up-chirps, ordered tone pairs and ascending tone
    steps over keyword-specific frequency bands, with durations spread over
    0.3 to 0.8 s. Every primitive is asymmetric under time reversal and no
    primitive equals another one's reversal, so reversed-segment training
    classes never collide with a different keyword.
    """
    duration = 0.3 + 0.5 * ((index * 7) % 10) / 10.0
    n = round(duration * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f_lo = 280.0 * (1.6 ** (index % 6))
    kind = index % 3
    if spec.mirrored_pair and index < 2:
        duration = 0.5
        n = round(duration * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        up = np.sin(2 * np.pi * (400.0 * t + (1200.0 - 400.0) / (2 * duration) * t ** 2))
        wave = up if index == 0 else up[::-1].copy()
    elif kind == 0:
        f_hi = 1.8 * f_lo
        wave = np.sin(2 * np.pi * (f_lo * t + (f_hi - f_lo) / (2 * duration) * t ** 2))
    elif kind == 1:
        half = n // 2
        wave = np.concatenate([np.sin(2 * np.pi * f_lo * t[:half]),
                               np.sin(2 * np.pi * 1.5 * f_lo * t[:n - half])])
    else:
        third = n // 3
        wave = np.concatenate([
            np.sin(2 * np.pi * f_lo * t[:third]),
            np.sin(2 * np.pi * 1.3 * f_lo * t[:third]),
            np.sin(2 * np.pi * 1.7 * f_lo * t[:n - 2 * third])])
    ramp = min(400, n // 4)
    env = np.ones(n)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0, ramp)
    return wave * env


def _instance(pattern: np.ndarray, rng: np.random.Generator, noise_level: float) -> np.ndarray:
    """A noisy realization: duration jitter, gain jitter, additive noise."""
    stretch = rng.uniform(0.92, 1.08)
    n_out = max(1, round(len(pattern) * stretch))
    src = np.linspace(0, len(pattern) - 1, n_out)
    warped = np.interp(src, np.arange(len(pattern)), pattern)
    gain = rng.uniform(0.6, 0.95)
    return gain * warped + noise_level * rng.standard_normal(n_out)


def _write_wav(path: Path, samples: np.ndarray) -> None:
    clipped = np.clip(samples, -1.0, 1.0)
    wavfile.write(str(path), SAMPLE_RATE, (clipped * 32767.0).astype(np.int16))


def _filler(rng: np.random.Generator) -> np.ndarray:
    """Distractor sound outside the keyword bands (may cause false alarms)."""
    dur = rng.uniform(0.15, 0.35)
    n = round(dur * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    freq = rng.uniform(3500.0, 5500.0)
    wave = 0.5 * np.sin(2 * np.pi * freq * t)
    ramp = min(200, n // 4)
    wave[:ramp] *= np.linspace(0, 1, ramp)
    wave[-ramp:] *= np.linspace(1, 0, ramp)
    return wave


def gen_toy(spec: ToyDatasetSpec, out_dir: str | Path) -> CorpusLayout:
    """Write a synthetic corpus; byte-identical for identical (spec, seed)."""
    out = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    keywords = [f"kw{idx:02d}" for idx in range(spec.n_keywords)]
    patterns = {kw: keyword_pattern(spec, idx) for idx, kw in enumerate(keywords)}

    for kw in keywords:
        kw_dir = out / "train" / kw
        kw_dir.mkdir(parents=True, exist_ok=True)
        for shot in range(spec.shots):
            _write_wav(kw_dir / f"{shot}.wav",
                       _instance(patterns[kw], rng, spec.noise_level))

    # Noise recordings mimic sentence backgrounds: a quiet floor at the same
    # absolute level as sentence gaps, occasional filler-like bursts, and one
    # louder click so peak normalization keeps the floor at gap level.
    noise_dir = out / "noise"
    noise_dir.mkdir(parents=True, exist_ok=True)
    for i in range(3):
        dur = rng.uniform(3.0, 6.0)
        samples = spec.noise_level * rng.standard_normal(round(dur * SAMPLE_RATE))
        for _ in range(int(rng.integers(1, 4))):
            burst = _filler(rng)
            at = int(rng.integers(SAMPLE_RATE // 2, len(samples) - len(burst)))
            samples[at:at + len(burst)] += burst
        click = np.hanning(160) * 0.9
        samples[:160] += click
        _write_wav(noise_dir / f"noise{i}.wav", samples)

    n_val = spec.n_sentences // 2
    split_sizes = {"val": n_val, "test": spec.n_sentences - n_val}
    sentence_no = 0
    for split, size in split_sizes.items():
        sent_dir = out / split / "sentences"
        sent_dir.mkdir(parents=True, exist_ok=True)
        events = []
        for _ in range(size):
            name = f"s{sentence_no:04d}.wav"
            sentence_no += 1
            samples, sent_events = _build_sentence(name, keywords, patterns, rng, spec)
            _write_wav(sent_dir / name, samples)
            events.extend(sent_events)
        write_annotations(out / split / "annotations.tsv", events)

    return load_corpus(out)


def _build_sentence(name: str, keywords: list[str], patterns: dict, rng, spec):
    """Concatenate noise gaps, fillers and 0..3 keyword instances."""
    parts = [np.zeros(0)]
    events = []
    cursor = 0

    def gap(lo=0.35, hi=0.9):
        nonlocal cursor
        n = round(rng.uniform(lo, hi) * SAMPLE_RATE)
        parts.append(spec.noise_level * rng.standard_normal(n))
        cursor += n

    gap(0.3, 0.7)
    n_events = int(rng.integers(0, 4))
    for _ in range(n_events):
        if rng.uniform() < 0.4:
            filler = _filler(rng)
            parts.append(filler + spec.noise_level * rng.standard_normal(len(filler)))
            cursor += len(filler)
            gap()
        kw = keywords[int(rng.integers(len(keywords)))]
        inst = _instance(patterns[kw], rng, spec.noise_level)
        onset = cursor / SAMPLE_RATE
        parts.append(inst)
        cursor += len(inst)
        events.append(EventAnnotation(file=name, onset_s=onset,
                                      offset_s=cursor / SAMPLE_RATE, keyword=kw))
        gap()
    if rng.uniform() < 0.3:
        filler = _filler(rng)
        parts.append(filler + spec.noise_level * rng.standard_normal(len(filler)))
        cursor += len(filler)
        gap(0.2, 0.5)
    return np.concatenate(parts), events
