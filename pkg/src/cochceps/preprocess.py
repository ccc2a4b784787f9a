"""Raw audio conditioning: resample, max-scale, drop silence, cut 3 s segments."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .cochlear_transform import FrameSpec, frame_signal, spectra

TARGET_RATE = 16000
SEGMENT_SECONDS = 3.0
MIN_SEGMENT_SECONDS = 1.0


class SilentSignalWarning(UserWarning):
    """Max scaling was asked to normalise an all-zero signal."""


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int = TARGET_RATE
    speaker_id: str = ""
    arousal: int | None = None
    valence: int | None = None
    origin: tuple[str, float] = ("", 0.0)
    padded_samples: int = 0

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def segment_id(self) -> str:
        src = Path(self.origin[0]).stem if self.origin[0] else "segment"
        return f"{src}@{self.origin[1]:.3f}"


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono float64 samples from a 16-bit, 32-bit int or float WAV (first channel)."""
    rate, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    return x, int(rate)


def write_wav(path, samples, sample_rate: int, dtype=np.float32) -> None:
    x = np.asarray(samples, dtype=np.float64)
    if np.dtype(dtype) == np.int16:
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(dtype)
    wavfile.write(str(path), int(sample_rate), data)


def resample(signal, from_rate: float, to_rate: float = TARGET_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling to ``round(len * to / from)`` samples.

    When downsampling, the polyphase filter low-passes at the output Nyquist.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if from_rate <= 0 or to_rate <= 0:
        raise ValueError("sample rates must be positive")
    if from_rate == to_rate:
        return x.copy()
    ratio = Fraction(to_rate) / Fraction(from_rate)
    ratio = ratio.limit_denominator(10000)
    y = resample_poly(x, ratio.numerator, ratio.denominator, window=("kaiser", 5.0))
    n_out = int(round(x.size * to_rate / from_rate))
    if y.size >= n_out:
        return y[:n_out]
    return np.concatenate([y, np.zeros(n_out - y.size)])


def max_scale(signal) -> np.ndarray:
    """Divide by the peak magnitude; an all-zero input is returned with a warning."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    peak = np.max(np.abs(x))
    if peak == 0:
        warnings.warn("max_scale on an all-zero signal", SilentSignalWarning, stacklevel=2)
        return x.copy()
    return x / peak


def frame_energy(signal, frame_spec: FrameSpec = FrameSpec()) -> np.ndarray:
    spec = spectra(frame_signal(signal, frame_spec), frame_spec.fft_size)
    return np.sum(spec.real**2 + spec.imag**2, axis=1)


def remove_silence(signal, frame_spec: FrameSpec = FrameSpec(), threshold_ratio: float = 0.1,
                   merge_gap_ms: float = 100.0) -> list[tuple[int, int]]:
    """Voiced sample intervals ``[start, stop)`` by spectral frame energy.

    A frame is silent when its energy is zero or below ``threshold_ratio``
    times the median frame energy. Each frame owns the hop-wide stretch
    around its centre; runs separated by less than ``merge_gap_ms`` merge.
    """
    x = np.asarray(signal, dtype=np.float64)
    energy = frame_energy(x, frame_spec)
    thr = threshold_ratio * np.median(energy)
    voiced = (energy > 0) & (energy >= thr)
    w, h = frame_spec.window_length, frame_spec.hop_length
    n = energy.size
    lead = (w - h) // 2

    def bounds(first, last):
        start = 0 if first == 0 else first * h + lead
        stop = x.size if last == n - 1 else last * h + lead + h
        return start, min(stop, x.size)

    runs = []
    idx = np.flatnonzero(voiced)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    firsts = np.concatenate([[idx[0]], idx[breaks + 1]])
    lasts = np.concatenate([idx[breaks], [idx[-1]]])
    for a, b in zip(firsts, lasts):
        runs.append(bounds(int(a), int(b)))

    gap = int(round(merge_gap_ms * frame_spec.sample_rate / 1000.0))
    merged = [runs[0]]
    for start, stop in runs[1:]:
        if start - merged[-1][1] < gap:
            merged[-1] = (merged[-1][0], stop)
        else:
            merged.append((start, stop))
    return merged


def segment_3s(signal, sample_rate: int = TARGET_RATE, *, speaker_id: str = "", arousal=None,
               valence=None, source: str = "", offset_seconds: float = 0.0,
               segment_seconds: float = SEGMENT_SECONDS,
               min_seconds: float = MIN_SEGMENT_SECONDS) -> list[AudioSegment]:
    """Consecutive non-overlapping cuts; a tail of at least ``min_seconds`` is zero-padded."""
    x = np.asarray(signal, dtype=np.float64)
    seg = int(round(segment_seconds * sample_rate))
    min_len = int(round(min_seconds * sample_rate))
    out = []
    for start in range(0, x.size, seg):
        piece = x[start:start + seg]
        pad = seg - piece.size
        if pad:
            if piece.size < min_len:
                break
            piece = np.concatenate([piece, np.zeros(pad)])
        out.append(AudioSegment(
            samples=piece.copy(),
            sample_rate=sample_rate,
            speaker_id=speaker_id,
            arousal=arousal,
            valence=valence,
            origin=(source, offset_seconds + start / sample_rate),
            padded_samples=pad,
        ))
    return out


@dataclass(frozen=True)
class PreprocessConfig:
    target_rate: int = TARGET_RATE
    frame_spec: FrameSpec = field(default_factory=FrameSpec)
    threshold_ratio: float = 0.1
    merge_gap_ms: float = 100.0
    segment_seconds: float = SEGMENT_SECONDS
    min_segment_seconds: float = MIN_SEGMENT_SECONDS


def preprocess_signal(signal, rate: float, config: PreprocessConfig = PreprocessConfig(), **meta) -> list[AudioSegment]:
    """resample -> max scale -> voiced intervals -> rescale each -> 3 s segments."""
    x = max_scale(resample(signal, rate, config.target_rate))
    if x.size < config.frame_spec.window_length:
        return []
    segments = []
    for start, stop in remove_silence(x, config.frame_spec, config.threshold_ratio, config.merge_gap_ms):
        piece = max_scale(x[start:stop])
        segments.extend(segment_3s(
            piece, config.target_rate,
            offset_seconds=start / config.target_rate,
            segment_seconds=config.segment_seconds,
            min_seconds=config.min_segment_seconds,
            **meta,
        ))
    return segments
