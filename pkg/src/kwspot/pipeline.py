"""Glue between frontend, labels, embedder and the DTW backend.

Everything the CLI does is a thin wrapper over these functions, so library
users get the same reproducible pipelines without the process boundary.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dtw, frontend
from .config import RunConfig, SAMPLE_RATE
from .dataset import CorpusLayout, sample_noise
from .embedder import EmbedderModel
from .errors import ParameterError
from .labels import (KeywordLabelSpace, SegmentLabel, TrainingItem, active_interval,
                     augment_reversed, positional_label)

log = logging.getLogger(__name__)


def seg_config(cfg: RunConfig) -> frontend.SegmentationConfig:
    return frontend.SegmentationConfig(seg_len_s=cfg.seg_len_s,
                                       train_overlap_s=cfg.train_overlap_s,
                                       infer_hop_samples=cfg.infer_hop_samples)


def prepare_file(path: str | Path, cfg: RunConfig) -> frontend.AudioClip:
    raw, rate = frontend.load_wav(path)
    return frontend.prepare_audio(raw, rate, source_id=Path(path).name)


def segment_logmels(clip: frontend.AudioClip, cfg: RunConfig, mode: str) -> list[np.ndarray]:
    segments = frontend.segment_clip(clip, seg_config(cfg), mode)
    return [frontend.logmel(seg, n_mels=cfg.n_mels, n_fft=cfg.n_fft, hop=cfg.stft_hop,
                            seg_len_s=cfg.seg_len_s, log_floor=cfg.log_floor).frames
            for seg in segments]


def build_training_set(corpus: CorpusLayout, cfg: RunConfig,
                       use_reversed: bool | None = None):
    """Frontend + label encoding for the whole training split.

    Returns (items, label_space, n_pos). Every isolated keyword file is one
    sample; each no-speech noise window is its own single-segment sample.
    """
    if use_reversed is None:
        use_reversed = cfg.use_reversed
    rng = np.random.default_rng(cfg.seed)
    space = KeywordLabelSpace(keywords=corpus.keywords, with_reversed=use_reversed)

    per_sample: list[tuple[str, list[np.ndarray]]] = []
    for path, kw in corpus.train:
        clip = prepare_file(path, cfg)
        mels = segment_logmels(clip, cfg, "train")
        per_sample.append((kw, mels))

    n_pos = max(len(mels) for _, mels in per_sample)
    items: list[TrainingItem] = []
    for sample_id, (kw, mels) in enumerate(per_sample):
        n_seg = len(mels)
        for i, mel in enumerate(mels, start=1):
            label = SegmentLabel(
                y_kw=space.one_hot(space.index(kw)),
                y_pos=positional_label(active_interval(n_seg, i, n_pos), n_pos),
                sample_id=sample_id, segment_index=i)
            items.append(TrainingItem(features=mel, label=label))

    if use_reversed:
        items = augment_reversed(items, space)

    noise_clips = [prepare_file(p, cfg).samples for p in corpus.noise]
    win = seg_config(cfg).win_samples
    next_id = 1 + max(it.label.sample_id for it in items)
    for k, window in enumerate(sample_noise(noise_clips, cfg.n_noise_train, win, rng)):
        seg = frontend.Segment(samples=window, center_time_s=0.0, index=0)
        mel = frontend.logmel(seg, n_mels=cfg.n_mels, n_fft=cfg.n_fft, hop=cfg.stft_hop,
                              seg_len_s=cfg.seg_len_s, log_floor=cfg.log_floor).frames
        label = SegmentLabel(y_kw=space.one_hot(space.no_speech_index),
                             y_pos=positional_label("no_speech", n_pos),
                             sample_id=next_id + k, segment_index=1)
        items.append(TrainingItem(features=mel, label=label))
    return items, space, n_pos


def embedding_template(clip: frontend.AudioClip, model: EmbedderModel, cfg: RunConfig,
                       keyword: str = "") -> dtw.Template:
    """Embed a clip on the inference grid and average overlaps into a template."""
    mels = segment_logmels(clip, cfg, "infer")
    placed = [(model.embed(mel), i) for i, mel in enumerate(mels)]
    return dtw.assemble_template(placed, keyword=keyword,
                                 source_duration_s=clip.duration_s,
                                 frame_hop_s=cfg.infer_hop_samples / SAMPLE_RATE)


def hfcc_template(clip: frontend.AudioClip, cfg: RunConfig,
                  keyword: str = "") -> dtw.Template:
    feats = frontend.hfcc(clip, n_coeffs=cfg.hfcc_n_coeffs, n_filters=cfg.hfcc_n_filters,
                          win=cfg.hfcc_win_samples, hop=cfg.hfcc_hop_samples,
                          n_fft=cfg.n_fft, erb_scale=cfg.hfcc_erb_scale,
                          log_floor=cfg.log_floor)
    return dtw.Template(frames=feats.frames, keyword=keyword,
                        source_duration_s=clip.duration_s,
                        frame_hop_s=feats.frame_step_s)


def query_template(path: str | Path, cfg: RunConfig,
                   model: EmbedderModel | None) -> dtw.Template:
    clip = prepare_file(path, cfg)
    if model is None:
        return hfcc_template(clip, cfg)
    return embedding_template(clip, model, cfg)


def enroll_templates(corpus: CorpusLayout, cfg: RunConfig,
                     model: EmbedderModel | None) -> list[dtw.Template]:
    """One template per training sample (all shots are kept, never averaged)."""
    templates = []
    for path, kw in corpus.train:
        clip = prepare_file(path, cfg)
        if model is None:
            templates.append(hfcc_template(clip, cfg, keyword=kw))
        else:
            templates.append(embedding_template(clip, model, cfg, keyword=kw))
    return templates


@dataclass(frozen=True)
class FileDetections:
    file: str
    detections: list[dtw.Detection]


def _detect_one(args) -> FileDetections:
    templates, path, thresholds, cfg, model = args
    query = query_template(path, cfg, model)
    dets = dtw.detect(templates, query, thresholds, cfg.min_dur_fraction)
    return FileDetections(file=Path(path).name, detections=dets)


def detect_files(templates: list[dtw.Template], files: list[Path], cfg: RunConfig,
                 thresholds: dict[str, float] | float,
                 model: EmbedderModel | None) -> dict[str, list[dtw.Detection]]:
    """Detect over many files, optionally with a process pool.

    Results are keyed and ordered by file name; worker count never changes
    the outputs.
    """
    jobs = [(templates, p, thresholds, cfg, model) for p in sorted(files)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(job) for job in jobs]
    return {r.file: r.detections for r in results}


def _pool_one(args):
    templates, path, cfg, model = args
    query = query_template(path, cfg, model)
    pool = dtw.candidate_pool(templates, query, cfg.tune_pool_size,
                              cfg.min_dur_fraction)
    return Path(path).name, pool


def candidate_pools(templates: list[dtw.Template], files: list[Path], cfg: RunConfig,
                    model: EmbedderModel | None) -> dict[str, list[dtw.Candidate]]:
    jobs = [(templates, p, cfg, model) for p in sorted(files)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_pool_one, jobs))
    else:
        results = [_pool_one(job) for job in jobs]
    return dict(results)
