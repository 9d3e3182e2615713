"""Run configuration with defaults for every pipeline constant.

All tunable constants of the frontend, loss, DTW backend and evaluation live
here so a single JSON file (plus command-line overrides) pins an entire run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

SAMPLE_RATE = 16000

# DTW step sizes as (d_row, d_col) increments along a warping path.
DTW_STEPS = ((2, 1), (1, 1), (1, 2))


@dataclass
class RunConfig:
    # Frontend
    seg_len_s: float = 0.25
    train_overlap_s: float = 0.05          # seg_len_s / 5
    infer_hop_samples: int = 256
    n_mels: int = 64
    n_fft: int = 1024
    stft_hop: int = 256
    log_floor: float = 1e-10
    highpass_hz: float = 50.0
    # HFCC baseline (constants documented here; see frontend.hfcc)
    hfcc_n_filters: int = 40
    hfcc_n_coeffs: int = 13
    hfcc_win_samples: int = 640            # 40 ms
    hfcc_hop_samples: int = 160            # 10 ms
    hfcc_erb_scale: float = 1.0
    # Embedder / loss
    d_emb: int = 128
    n_cluster: int = 16
    pos_weight: float = 1.0                # 0.0 disables the position head
    use_reversed: bool = True
    learning_rate: float = 0.01
    epochs: int = 60
    batch_size: int = 32
    n_noise_train: int = 20                # no-speech samples drawn for training
    # Backend / detection
    min_dur_fraction: float = 0.5
    threshold_mode: str = "global"         # "global" | "per_keyword"
    tune_pool_size: int = 25               # candidates kept per (file, keyword) for tuning
    # Misc
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if not 0 < self.train_overlap_s < self.seg_len_s:
            raise ConfigError("train_overlap_s must lie strictly between 0 and seg_len_s")
        if self.infer_hop_samples < 1:
            raise ConfigError("infer_hop_samples must be >= 1")
        if self.threshold_mode not in ("global", "per_keyword"):
            raise ConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(values)
