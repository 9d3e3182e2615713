import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwspot.errors import DecodeError, ParameterError
from kwspot.frontend import (AudioClip, Segment, SegmentationConfig, hfcc, logmel,
                             mel_center_frequencies, prepare_audio, segment_clip,
                             segment_count)

SR = 16000


def tone(freq, duration_s=1.0, sr=SR, ramp_s=0.05):
    t = np.arange(round(duration_s * sr)) / sr
    env = np.minimum(1.0, np.minimum(t / ramp_s, (duration_s - t) / ramp_s))
    return np.sin(2 * np.pi * freq * t) * np.clip(env, 0, 1)


def clip_of(samples):
    return AudioClip(samples=np.asarray(samples, dtype=np.float64), sample_rate=SR)


class TestPrepareAudio:
    def test_identical_channel_mixdown(self):
        x = tone(500)
        stereo = np.stack([x, x], axis=1)
        mono = stereo.mean(axis=1)
        assert np.allclose(mono, x)
        out = prepare_audio(stereo, SR)
        ref = prepare_audio(x, SR)
        assert np.allclose(out.samples, ref.samples)

    def test_all_zero_clip_no_division(self):
        out = prepare_audio(np.zeros(4000), SR)
        assert np.allclose(out.samples, 0.0)

    def test_resampled_tone_keeps_frequency(self):
        t = np.arange(8000) / 8000
        out = prepare_audio(np.sin(2 * np.pi * 440 * t), 8000)
        assert out.sample_rate == SR
        assert len(out.samples) == 16000
        window = out.samples[2000:2000 + 1024] * np.hanning(1024)
        peak_hz = np.argmax(np.abs(np.fft.rfft(window))) * SR / 1024
        assert abs(peak_hz - 440) <= SR / 1024  # within one bin

    def test_peak_normalized(self):
        out = prepare_audio(0.1 * tone(700), SR)
        assert np.abs(out.samples).max() == pytest.approx(1.0, abs=0.05)

    def test_empty_input_rejected(self):
        with pytest.raises(DecodeError):
            prepare_audio(np.array([]), SR)

    def test_bad_rate_rejected(self):
        with pytest.raises(ParameterError):
            prepare_audio(np.ones(100), 0)

    def test_idempotent_after_transients(self):
        first = prepare_audio(tone(440), SR)
        second = prepare_audio(first.samples, SR)
        skip = int(0.1 * SR)
        assert np.abs(second.samples[skip:] - first.samples[skip:]).max() <= 1e-3


class TestSegmentation:
    def test_one_second_train(self):
        segs = segment_clip(clip_of(tone(500, 1.0)), SegmentationConfig(), "train")
        assert len(segs) == 6

    def test_quarter_second_train(self):
        segs = segment_clip(clip_of(np.full(4000, 0.1)), SegmentationConfig(), "train")
        assert len(segs) == 2

    def test_one_second_infer(self):
        segs = segment_clip(clip_of(tone(500, 1.0)), SegmentationConfig(), "infer")
        assert len(segs) == 63

    def test_fixed_window_length(self):
        for seg in segment_clip(clip_of(tone(500, 0.4)), SegmentationConfig(), "train"):
            assert len(seg.samples) == 4000

    def test_infer_center_times(self):
        segs = segment_clip(clip_of(tone(500, 0.5)), SegmentationConfig(), "infer")
        for i, seg in enumerate(segs):
            assert seg.center_time_s == pytest.approx(i * 256 / SR, abs=1e-9)

    def test_empty_clip_rejected(self):
        with pytest.raises(ParameterError):
            segment_clip(clip_of(np.array([])), SegmentationConfig(), "train")

    def test_bad_mode_rejected(self):
        with pytest.raises(ParameterError):
            segment_clip(clip_of(tone(500)), SegmentationConfig(), "test")

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(min_value=1, max_value=30000),
           mode=st.sampled_from(["train", "infer"]))
    def test_count_formula_matches_enumeration(self, n, mode):
        cfg = SegmentationConfig()
        step = cfg.train_step_samples if mode == "train" else cfg.infer_hop_samples
        padded = n + 2 * cfg.pad_samples
        # independent oracle: enumerate window starts
        expected = len([s for s in range(0, padded, step) if s + cfg.win_samples <= padded])
        segs = segment_clip(clip_of(np.linspace(0.1, 0.9, n)), cfg, mode)
        assert segment_count(n, cfg, mode) == expected
        assert len(segs) == expected


class TestLogMel:
    def test_shape(self):
        seg = Segment(samples=tone(500, 0.25, ramp_s=0.01), center_time_s=0, index=0)
        assert logmel(seg).frames.shape == (16, 64)

    def test_silence_floor(self):
        out = logmel(Segment(samples=np.zeros(4000), center_time_s=0, index=0))
        assert np.allclose(out.frames, math.log(1e-10))
        assert np.all(out.frames[0] == out.frames)  # all frames identical

    def test_pure_tone_argmax_is_nearest_center(self):
        t = np.arange(4000) / SR
        seg = Segment(samples=np.sin(2 * np.pi * 1000 * t), center_time_s=0, index=0)
        frames = logmel(seg).frames
        centers = mel_center_frequencies(64)
        nearest = int(np.argmin(np.abs(centers - 1000)))
        argmax = np.argmax(frames, axis=1)
        assert set(argmax.tolist()) == {nearest}

    def test_finite_for_random_segments(self, rng):
        for _ in range(10):
            seg = Segment(samples=rng.normal(size=4000), center_time_s=0, index=0)
            assert np.all(np.isfinite(logmel(seg).frames))

    def test_wrong_length_rejected(self):
        with pytest.raises(ParameterError):
            logmel(Segment(samples=np.zeros(3999), center_time_s=0, index=0))

    def test_frame_count_matches_ceil_rule(self):
        # 0.4 s config: ceil(6400 / 256) = 25 frames
        seg = Segment(samples=np.zeros(6400), center_time_s=0, index=0)
        out = logmel(seg, seg_len_s=0.4)
        assert out.frames.shape == (25, 64)


class TestHfcc:
    def test_frame_count_one_second(self):
        feats = hfcc(clip_of(tone(700, 1.0)))
        assert feats.frames.shape == (97, 39)
        assert feats.feature_kind == "hfcc"

    def test_stationary_input_gives_identical_frames(self):
        feats = hfcc(clip_of(np.zeros(8000)))
        assert np.allclose(feats.frames, feats.frames[0])

    def test_gain_moves_only_c0(self, rng):
        x = rng.normal(size=8000) * 0.1
        a = hfcc(clip_of(x)).frames
        b = hfcc(clip_of(3.0 * x)).frames
        diff = b - a
        assert np.abs(diff[:, 0] - diff[0, 0]).max() < 1e-8   # constant c0 shift
        assert diff[0, 0] > 0.1
        assert np.abs(diff[:, 1:]).max() < 1e-8               # everything else equal

    def test_too_short_rejected(self):
        with pytest.raises(ParameterError):
            hfcc(clip_of(np.zeros(639)))
