"""Command-line entry point.

Subcommands: gen-toy, features, train, enroll, detect, tune, eval, bench.
Exit codes: 0 success, 2 configuration/usage error, 1 runtime error.
Set KWS_LOG=DEBUG|INFO|WARNING to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset, dtw, evaluation, formats, pipeline, report
from .config import RunConfig, SAMPLE_RATE
from .embedder import EmbedderModel, TrainerConfig, train_frame_embedder
from .errors import ConfigError, KwspotError
from .frontend import hfcc, load_wav, prepare_audio

log = logging.getLogger("kwspot")


def _setup_logging() -> None:
    level = os.environ.get("KWS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("seed", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_reversed", False):
        overrides["use_reversed"] = False
    if getattr(args, "no_pos_loss", False):
        overrides["pos_weight"] = 0.0
    if getattr(args, "thresholds_mode", None):
        overrides["threshold_mode"] = {"global": "global",
                                       "individual": "per_keyword"}[args.thresholds_mode]
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    if getattr(args, "dump_config", None):
        cfg.dump(args.dump_config)
    return cfg


def _write_detections_tsv(path: Path, dets_by_file: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["file", "onset_s", "offset_s", "keyword", "score"])
        for file in sorted(dets_by_file):
            for d in sorted(dets_by_file[file], key=lambda d: (d.onset_s, d.offset_s)):
                writer.writerow([file, f"{d.onset_s:.6f}", f"{d.offset_s:.6f}",
                                 d.keyword, f"{d.score:.6f}"])


def _read_detections_tsv(path: Path) -> list[evaluation.EventAnnotation]:
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            events.append(evaluation.EventAnnotation(
                file=row["file"], onset_s=float(row["onset_s"]),
                offset_s=float(row["offset_s"]), keyword=row["keyword"]))
    return events


def _load_thresholds(path: Path, keywords: list[str]) -> dict[str, float]:
    data = json.loads(Path(path).read_text())
    mode = data.get("mode", "global")
    if mode == "global":
        return {kw: float(data["global"]) for kw in keywords}
    per_kw = data.get("per_keyword", {})
    missing = [kw for kw in keywords if kw not in per_kw]
    if missing:
        raise ConfigError(f"thresholds file lacks keywords: {missing}")
    return {kw: float(per_kw[kw]) for kw in keywords}


def _load_templates(template_dir: Path) -> list[dtw.Template]:
    files = sorted(Path(template_dir).glob("*.kwte"))
    if not files:
        raise ConfigError(f"no .kwte files under {template_dir}")
    templates = []
    for f in files:
        frames, trailer = formats.read_template_file(f)
        templates.append(dtw.Template(frames=frames, keyword=trailer["keyword"],
                                      source_duration_s=trailer["source_duration_s"],
                                      frame_hop_s=trailer["frame_hop_s"]))
    return templates


def _maybe_model(args, cfg) -> EmbedderModel | None:
    if getattr(args, "features", "embedding") == "hfcc":
        return None
    if not getattr(args, "model", None):
        raise ConfigError("embedding mode needs --model (or pass --features hfcc)")
    if not Path(args.model).is_file():
        raise ConfigError(f"model file not found: {args.model}")
    return EmbedderModel.load(args.model)


# --- subcommands ------------------------------------------------------------

def cmd_gen_toy(args) -> int:
    cfg = _load_config(args)
    try:
        spec = dataset.ToyDatasetSpec(n_keywords=args.keywords, shots=args.shots,
                                      n_sentences=args.sentences,
                                      noise_level=args.noise_level, seed=cfg.seed)
    except KwspotError as exc:
        raise ConfigError(str(exc)) from exc
    corpus = dataset.gen_toy(spec, args.out)
    log.info("generated corpus with %d keywords at %s", len(corpus.keywords), args.out)
    print(f"wrote corpus: {len(corpus.keywords)} keywords, "
          f"{len(corpus.train)} training files, "
          f"{len(corpus.validation_files)} val / {len(corpus.test_files)} test sentences")
    return 0


def cmd_features(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for wav in args.audio:
        clip = pipeline.prepare_file(wav, cfg)
        stem = Path(wav).stem
        if args.kind == "hfcc":
            feats = hfcc(clip, n_coeffs=cfg.hfcc_n_coeffs, n_filters=cfg.hfcc_n_filters,
                         win=cfg.hfcc_win_samples, hop=cfg.hfcc_hop_samples,
                         n_fft=cfg.n_fft, erb_scale=cfg.hfcc_erb_scale,
                         log_floor=cfg.log_floor)
            matrix = feats.frames
            sidecar = {"kind": "hfcc", "frame_step_s": feats.frame_step_s,
                       "source": Path(wav).name}
        else:
            mels = pipeline.segment_logmels(clip, cfg, args.mode)
            matrix = np.concatenate(mels, axis=0)
            sidecar = {"kind": "logmel", "mode": args.mode,
                       "frame_hop_samples": cfg.stft_hop,
                       "n_segments": len(mels), "frames_per_segment": mels[0].shape[0],
                       "source": Path(wav).name}
        formats.write_feature_dump(out_dir / f"{stem}.kwfe", matrix, sidecar)
    print(f"wrote {len(args.audio)} feature dump(s) to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus = dataset.load_corpus(args.corpus)
    items, space, n_pos = pipeline.build_training_set(corpus, cfg)
    trainer = TrainerConfig(d_emb=cfg.d_emb, n_cluster=cfg.n_cluster,
                            learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                            batch_size=cfg.batch_size, seed=cfg.seed,
                            pos_weight=cfg.pos_weight)
    model = train_frame_embedder(items, space, n_pos, trainer)
    model.config["use_reversed"] = cfg.use_reversed
    model.save(args.out)
    print(f"trained on {len(items)} segments ({space.n_classes} classes, "
          f"n_pos={n_pos}); final loss {model.loss_trace[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_enroll(args) -> int:
    cfg = _load_config(args)
    corpus = dataset.load_corpus(args.corpus)
    model = _maybe_model(args, cfg)
    templates = pipeline.enroll_templates(corpus, cfg, model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    counters: dict[str, int] = {}
    for tpl in templates:
        n = counters.get(tpl.keyword, 0)
        counters[tpl.keyword] = n + 1
        formats.write_template_file(out_dir / f"{tpl.keyword}__{n}.kwte", tpl.frames,
                                    tpl.keyword, tpl.source_duration_s, tpl.frame_hop_s)
    print(f"wrote {len(templates)} template(s) to {out_dir}")
    return 0


def _resolve_audio_args(args, cfg) -> list[Path]:
    files = []
    for entry in args.audio:
        p = Path(entry)
        if p.is_dir():
            files.extend(sorted(p.glob("*.wav")))
        else:
            files.append(p)
    if not files:
        raise ConfigError("no audio files given")
    return files


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    templates = _load_templates(args.templates)
    model = _maybe_model(args, cfg)
    keywords = sorted({t.keyword for t in templates})
    if args.thresholds_file:
        thresholds = _load_thresholds(args.thresholds_file, keywords)
    else:
        thresholds = {kw: args.threshold for kw in keywords}
    files = _resolve_audio_args(args, cfg)
    dets = pipeline.detect_files(templates, files, cfg, thresholds, model)
    out = Path(args.out)
    _write_detections_tsv(out, dets)
    total = sum(len(v) for v in dets.values())
    if args.plot:
        events = evaluation.detections_to_events(dets)
        duration = max((load_wav(f)[0].shape[0] / SAMPLE_RATE for f in files), default=1.0)
        report.save_detection_timeline(events, [], duration,
                                       out.with_suffix(".png"))
    print(f"wrote {total} detection(s) for {len(files)} file(s) to {out}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    corpus = dataset.load_corpus(args.corpus)
    templates = _load_templates(args.templates)
    model = _maybe_model(args, cfg)
    files, refs = corpus.split(args.split)
    pools = pipeline.candidate_pools(templates, list(files), cfg, model)
    keywords = sorted({t.keyword for t in templates})
    thresholds, tuned_report = evaluation.tune_thresholds(
        pools, list(refs), keywords, mode=cfg.threshold_mode,
        min_dur_fraction=cfg.min_dur_fraction)

    # Re-run the real detection pipeline at the tuned threshold(s) so the
    # reported F is exactly what a detect + eval round would produce.
    dets = pipeline.detect_files(templates, list(files), cfg, thresholds, model)
    det_events = evaluation.detections_to_events(dets)
    final = evaluation.micro_f1(*evaluation.match_events(list(refs), det_events))

    out = Path(args.out)
    payload = {"mode": cfg.threshold_mode,
               "validation_f": final.f_score,
               "validation_metrics": final.to_dict()}
    if cfg.threshold_mode == "global":
        payload["global"] = thresholds[keywords[0]]
    else:
        payload["per_keyword"] = thresholds
    out.write_text(json.dumps(payload, indent=2) + "\n")

    if args.plot:
        scores = sorted({c.score for pool in pools.values() for c in pool})
        grid = evaluation.threshold_grid(scores) if scores else []
        sweep = [evaluation.evaluate_thresholds(
            pools, list(refs), {kw: t for kw in keywords}, cfg.min_dur_fraction).f_score
            for t in grid]
        chosen = thresholds[keywords[0]] if cfg.threshold_mode == "global" else float("nan")
        report.save_threshold_sweep_figure(grid, sweep, chosen, out.with_suffix(".png"))
    print(f"tuned {cfg.threshold_mode} threshold(s); validation F = {final.f_score:.4f}; "
          f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    dets = _read_detections_tsv(Path(args.detections))
    refs = evaluation.read_annotations(Path(args.annotations))
    tp, fp, fn = evaluation.match_events(refs, dets)
    rep = evaluation.micro_f1(tp, fp, fn)
    payload = rep.to_dict()
    payload["mode"] = cfg.threshold_mode
    if args.thresholds_file:
        payload["thresholds"] = json.loads(Path(args.thresholds_file).read_text())
    out = Path(args.out)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    if args.plot:
        per_kw = {}
        for kw in sorted({e.keyword for e in refs} | {e.keyword for e in dets}):
            kw_counts = evaluation.match_events(
                [e for e in refs if e.keyword == kw],
                [e for e in dets if e.keyword == kw])
            per_kw[kw] = kw_counts
        report.save_metrics_figure(rep, per_kw, out.with_suffix(".png"))
    print(f"P={rep.precision:.4f} R={rep.recall:.4f} F={rep.f_score:.4f} "
          f"(tp={tp}, fp={fp}, fn={fn}); wrote {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    templates = _load_templates(args.templates)
    model = _maybe_model(args, cfg)
    keywords = sorted({t.keyword for t in templates})
    thresholds = {kw: args.threshold for kw in keywords}
    files = _resolve_audio_args(args, cfg)
    audio_s = 0.0
    for f in files:
        samples, rate = load_wav(f)
        audio_s += len(samples) / rate
    if audio_s == 0:
        payload = {"audio_s": 0.0, "wall_s": 0.0, "real_time_factor": 0.0,
                   "workers": cfg.workers}
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
        print("no audio; wrote empty bench report")
        return 0

    t0 = time.perf_counter()
    dets = pipeline.detect_files(templates, files, cfg, thresholds, model)
    wall = time.perf_counter() - t0
    out = Path(args.out)
    _write_detections_tsv(out.with_suffix(".tsv"), dets)
    payload = {"audio_s": audio_s, "wall_s": wall,
               "real_time_factor": audio_s / wall, "workers": cfg.workers,
               "n_files": len(files), "n_templates": len(templates),
               "n_detections": sum(len(v) for v in dets.values())}
    out.write_text(json.dumps(payload, indent=2) + "\n")
    if args.plot:
        report.save_bench_figure(audio_s, {cfg.workers: wall}, out.with_suffix(".png"))
    print(f"processed {audio_s:.1f}s of audio in {wall:.1f}s "
          f"(x{audio_s / wall:.1f} real time, workers={cfg.workers}); wrote {out}")
    return 0


# --- parser -----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--dump-config", help="write the effective config JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwspot",
                                     description="Few-shot keyword spotting with "
                                                 "temporal embeddings and subsequence DTW")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--keywords", type=int, default=3)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--sentences", type=int, default=40)
    p.add_argument("--noise-level", type=float, default=0.02)
    _add_common(p)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("features", help="dump KWFE feature files")
    p.add_argument("audio", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["logmel", "hfcc"], default="logmel")
    p.add_argument("--mode", choices=["train", "infer"], default="train")
    _add_common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the frame-wise embedder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-reversed", action="store_true",
                   help="disable reversed-segment augmentation")
    p.add_argument("--no-pos-loss", action="store_true",
                   help="train with the keyword head only")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enroll", help="build templates from the training split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="embedder model file (KWEM)")
    p.add_argument("--features", choices=["embedding", "hfcc"], default="embedding")
    _add_common(p)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("detect", help="detect keywords in audio files")
    p.add_argument("audio", nargs="+", help="wav files or directories")
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="embedder model file (KWEM)")
    p.add_argument("--features", choices=["embedding", "hfcc"], default="embedding")
    p.add_argument("--thresholds-file", help="thresholds JSON from `kwspot tune`")
    p.add_argument("--threshold", type=float, default=-0.5,
                   help="global threshold when no thresholds file is given")
    p.add_argument("--plot", action="store_true", help="render a timeline figure")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("tune", help="tune detection thresholds on a validation split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["val", "test"], default="val")
    p.add_argument("--model", help="embedder model file (KWEM)")
    p.add_argument("--features", choices=["embedding", "hfcc"], default="embedding")
    p.add_argument("--thresholds", dest="thresholds_mode",
                   choices=["global", "individual"], default=None)
    p.add_argument("--plot", action="store_true", help="render the F-vs-threshold sweep")
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds-file", help="included verbatim in the metrics JSON")
    p.add_argument("--plot", action="store_true", help="render the metrics figure")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure detection speed vs audio duration")
    p.add_argument("audio", nargs="+", help="wav files or directories")
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="embedder model file (KWEM)")
    p.add_argument("--features", choices=["embedding", "hfcc"], default="embedding")
    p.add_argument("--threshold", type=float, default=-0.5)
    p.add_argument("--plot", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KwspotError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
