"""Audio frontend: decoding, preparation, segmentation and feature extraction.

All clips are reduced to mono float64 at 16 kHz before anything else happens.
Features come in two flavours: 64-bin log-Mel magnitude spectrograms computed
per 0.25 s segment (the embedder input) and HFCC cepstra computed over whole
clips (the untrained baseline representation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.fft import dct
from scipy.io import wavfile

from .config import SAMPLE_RATE
from .errors import DecodeError, ParameterError

# Polyphase resampler kernel: windowed sinc with a Kaiser window, beta = 5.0
# (the scipy.signal.resample_poly default, fixed here as a constant of the
# implementation so that outputs are reproducible across scipy versions).
RESAMPLE_WINDOW = ("kaiser", 5.0)


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform, peak-normalized, 16 kHz after preparation."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SegmentationConfig:
    seg_len_s: float = 0.25
    train_overlap_s: float = 0.05
    infer_hop_samples: int = 256

    @property
    def win_samples(self) -> int:
        return math.ceil(self.seg_len_s * SAMPLE_RATE)

    @property
    def pad_samples(self) -> int:
        return math.floor(self.seg_len_s * SAMPLE_RATE / 2)

    @property
    def train_step_samples(self) -> int:
        return round((self.seg_len_s - self.train_overlap_s) * SAMPLE_RATE)

    def validate(self) -> None:
        if not 0 < self.train_overlap_s < self.seg_len_s:
            raise ParameterError("train overlap must lie strictly between 0 and seg_len_s")
        if self.infer_hop_samples < 1:
            raise ParameterError("infer hop must be >= 1 sample")


@dataclass(frozen=True)
class Segment:
    """Fixed-length window extracted from a padded clip."""

    samples: np.ndarray
    center_time_s: float
    index: int


@dataclass(frozen=True)
class LogMelSpectrogram:
    frames: np.ndarray                # (T, n_mels)
    frame_hop_samples: int = 256


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray                # (N, D)
    frame_step_s: float
    feature_kind: str                 # "logmel" | "hfcc"
    source_id: str = ""


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a RIFF/WAVE file (PCM16 or IEEE float) as (samples, rate).

    Samples come back as float64 in [-1, 1] with shape (n,) or (n, channels).
    """
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    if data.size == 0:
        raise DecodeError(f"{path} holds no samples")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise DecodeError(f"{path}: unsupported sample format {data.dtype}")
    return samples, int(rate)


def prepare_audio(raw: np.ndarray, rate: int, source_id: str = "") -> AudioClip:
    """Mixdown -> peak-normalize -> resample to 16 kHz -> high-pass at 50 Hz.

    The high-pass is a second-order Butterworth run zero-phase (forward and
    backward), so preparation is idempotent on already-prepared clips: a
    forward-only pass would re-shift the passband phase by several degrees
    and move samples on every application. The resampler is polyphase
    windowed-sinc (see RESAMPLE_WINDOW). All-zero input skips normalization
    instead of dividing by zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise DecodeError("empty audio input")
    if rate <= 0:
        raise ParameterError(f"sample rate must be positive, got {rate}")
    if raw.ndim == 2:
        mono = raw.mean(axis=1)
    elif raw.ndim == 1:
        mono = raw
    else:
        raise ParameterError(f"expected 1-D or 2-D sample array, got shape {raw.shape}")

    peak = np.max(np.abs(mono))
    if peak > 0:
        mono = mono / peak

    if rate != SAMPLE_RATE:
        g = math.gcd(SAMPLE_RATE, int(rate))
        mono = signal.resample_poly(mono, SAMPLE_RATE // g, int(rate) // g, window=RESAMPLE_WINDOW)

    sos = signal.butter(2, 50.0, btype="highpass", fs=SAMPLE_RATE, output="sos")
    if len(mono) > 3:
        # pad over ~3 time constants of the 50 Hz corner to keep edge
        # transients out of the signal body
        padlen = min(3 * SAMPLE_RATE // 50, len(mono) - 2)
        filtered = signal.sosfiltfilt(sos, mono, padlen=padlen)
    else:
        filtered = signal.sosfilt(sos, mono)
    return AudioClip(samples=filtered, sample_rate=SAMPLE_RATE, source_id=source_id)


def segment_count(n_samples: int, cfg: SegmentationConfig, mode: str) -> int:
    step = cfg.train_step_samples if mode == "train" else cfg.infer_hop_samples
    padded = n_samples + 2 * cfg.pad_samples
    return (padded - cfg.win_samples) // step + 1


def segment_clip(clip: AudioClip, cfg: SegmentationConfig, mode: str) -> list[Segment]:
    """Cut a prepared clip into fixed-length windows.

    The clip is zero-padded by ``pad_samples`` on both sides so segment
    centers align with their position in the unpadded signal; windows then
    advance by 3200 samples (train) or ``infer_hop_samples`` (infer).
    """
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg.validate()
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < 1:
        raise ParameterError("clip must hold at least one sample")

    step = cfg.train_step_samples if mode == "train" else cfg.infer_hop_samples
    win = cfg.win_samples
    padded = np.concatenate([np.zeros(cfg.pad_samples), x, np.zeros(cfg.pad_samples)])
    count = (len(padded) - win) // step + 1

    segments = []
    for i in range(count):
        start = i * step
        chunk = padded[start:start + win]
        if len(chunk) < win:
            chunk = np.concatenate([chunk, np.zeros(win - len(chunk))])
        center = (start + win / 2 - cfg.pad_samples) / SAMPLE_RATE
        segments.append(Segment(samples=chunk, center_time_s=center, index=i))
    return segments


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = 64, n_fft: int = 1024, fmin: float = 0.0,
                   fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Triangular filters with peak 1, centers equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    edges = mel_to_hz(mels)
    bin_freqs = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_center_frequencies(n_mels: int = 64, fmin: float = 0.0,
                           fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def _frame_signal(x: np.ndarray, n_frames: int, hop: int, win: int) -> np.ndarray:
    """Center-aligned framing: frame t covers [t*hop - win//2, t*hop + win//2)."""
    half = win // 2
    frames = np.zeros((n_frames, win))
    for t in range(n_frames):
        start = t * hop - half
        lo = max(start, 0)
        hi = min(start + win, len(x))
        if hi > lo:
            frames[t, lo - start:hi - start] = x[lo:hi]
    return frames


def logmel(segment: Segment, n_mels: int = 64, n_fft: int = 1024, hop: int = 256,
           seg_len_s: float = 0.25, log_floor: float = 1e-10) -> LogMelSpectrogram:
    """64-bin log-Mel magnitude spectrogram of one segment.

    STFT uses periodic Hann windows of size ``n_fft`` with hop ``hop``;
    framing is center-aligned and the frame count is forced to exactly
    ceil(len / hop) so it always matches the embedding grid.
    """
    expected = math.ceil(seg_len_s * SAMPLE_RATE)
    x = np.asarray(segment.samples, dtype=np.float64)
    if len(x) != expected:
        raise ParameterError(f"segment must hold {expected} samples, got {len(x)}")

    n_frames = math.ceil(len(x) / hop)
    frames = _frame_signal(x, n_frames, hop, n_fft)
    window = signal.get_window("hann", n_fft, fftbins=True)
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    fb = mel_filterbank(n_mels, n_fft)
    mel = mag @ fb.T
    return LogMelSpectrogram(frames=np.log(mel + log_floor), frame_hop_samples=hop)


def erb_bandwidth_hz(fc):
    """Equivalent rectangular bandwidth of the auditory filter at center fc."""
    fc = np.asarray(fc, dtype=np.float64)
    return 6.23e-6 * fc ** 2 + 93.39e-3 * fc + 28.52


@lru_cache(maxsize=8)
def hfcc_filterbank(n_filters: int = 40, n_fft: int = 1024, erb_scale: float = 1.0,
                    fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Mel-spaced triangular filters whose widths follow the ERB scale.

    Centers sit on a mel-spaced grid like the plain mel bank, but each
    triangle is symmetric about its center in Hz with base width
    3 * erb_scale * ERB(fc), which gives the triangle an equivalent
    rectangular bandwidth of erb_scale * ERB(fc).
    """
    centers = mel_center_frequencies(n_filters, fmin, fmax)
    bin_freqs = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    fb = np.zeros((n_filters, len(bin_freqs)))
    for m, fc in enumerate(centers):
        half_base = 1.5 * erb_scale * erb_bandwidth_hz(fc)
        lo = max(fc - half_base, 0.0)
        hi = min(fc + half_base, fmax)
        rising = (bin_freqs - lo) / max(fc - lo, 1e-9)
        falling = (hi - bin_freqs) / max(hi - fc, 1e-9)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def hfcc(clip: AudioClip, n_coeffs: int = 13, n_filters: int = 40,
         win: int = 640, hop: int = 160, n_fft: int = 1024,
         erb_scale: float = 1.0, log_floor: float = 1e-10) -> FeatureMatrix:
    """HFCC cepstra with first- and second-order deltas (D = 3 * n_coeffs).

    40 ms Hamming windows advance by 10 ms; magnitudes pass through the
    ERB-width filterbank, a log, and an orthonormal DCT-II. No padding:
    frame count = floor((len - win) / hop) + 1.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < win:
        raise ParameterError(f"clip must hold at least {win} samples, got {len(x)}")
    n_frames = (len(x) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    window = signal.get_window("hamming", win, fftbins=True)
    mag = np.abs(np.fft.rfft(x[idx] * window, n=n_fft, axis=1))
    fb = hfcc_filterbank(n_filters, n_fft, erb_scale)
    logspec = np.log(mag @ fb.T + log_floor)
    cepstra = dct(logspec, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    d1 = _delta(cepstra)
    d2 = _delta(d1)
    feats = np.concatenate([cepstra, d1, d2], axis=1)
    return FeatureMatrix(frames=feats, frame_step_s=hop / SAMPLE_RATE,
                         feature_kind="hfcc", source_id=clip.source_id)


def _delta(feats: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +/- width frames with edge replication."""
    n_frames = len(feats)
    padded = np.pad(feats, ((width, width), (0, 0)), mode="edge")
    num = np.zeros_like(feats)
    for n in range(1, width + 1):
        num += n * (padded[width + n:width + n + n_frames]
                    - padded[width - n:width - n + n_frames])
    return num / (2 * sum(k * k for k in range(1, width + 1)))
