"""Short-time framing, the cochlear filterbank and per-frame mode energies.

A cochlear mode for grid angle ``theta_k`` is the frame spectrum weighted by
the filterbank row and by ``sqrt(theta_k)``::

    FCT[k, w] = sqrt(theta_k) * P(w) * Phi(theta_k, w)

with ``theta_k`` converted to radians. The filterbank rows are real, so the
conjugate in the mode definition is a no-op. The mode energy is
``X[k, t] = sum_w |FCT[k, w](t)|**2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import get_window

from . import kernels
from .tonotopy import AngleGrid, angle_grid


class FilterbankWarning(UserWarning):
    """Center frequency clipped below Nyquist."""


@dataclass(frozen=True)
class FrameSpec:
    window_ms: float = 25.0
    overlap_fraction: float = 0.5
    window_shape: str = "hamming"
    sample_rate: int = 16000

    def __post_init__(self):
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.window_length < 2:
            raise ValueError("window must span at least two samples")
        if self.hop_length < 1:
            raise ValueError("hop must be at least one sample")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.window_length * (1.0 - self.overlap_fraction)))

    @property
    def fft_size(self) -> int:
        return 1 << (self.window_length - 1).bit_length()

    def window(self) -> np.ndarray:
        # symmetric window, as used for analysis frames
        return get_window(self.window_shape, self.window_length, fftbins=False)

    def frame_count(self, n_samples: int) -> int:
        w, h = self.window_length, self.hop_length
        if n_samples < w:
            raise ValueError(f"signal of {n_samples} samples is shorter than one window ({w})")
        return (n_samples - w) // h + 1


def frame_signal(samples, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Cut ``samples`` into windowed frames, shape ``(n_frames, window_length)``."""
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a mono waveform")
    n = spec.frame_count(x.size)
    w, h = spec.window_length, spec.hop_length
    idx = h * np.arange(n)[:, None] + np.arange(w)[None, :]
    return x[idx] * spec.window()[None, :]


@dataclass(frozen=True)
class SpectralFrame:
    bins: np.ndarray
    freq_axis: np.ndarray


def spectra(frames: np.ndarray, fft_size: int) -> np.ndarray:
    """One-sided spectra of zero-padded frames, shape ``(n_frames, fft_size // 2 + 1)``."""
    if frames.shape[-1] > fft_size:
        raise ValueError("fft_size smaller than frame length")
    return np.fft.rfft(frames, n=fft_size, axis=-1)


def freq_axis(fft_size: int, sample_rate: float) -> np.ndarray:
    return np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)


def gaussian_log_kernel(centers: np.ndarray, freqs: np.ndarray, q_factor: float) -> np.ndarray:
    """Unit-peak Gaussians on a log-frequency axis.

    The half-power bandwidth of row ``k`` is ``centers[k] / q_factor`` Hz.
    The DC bin is placed at half a bin width on the log axis so that very low
    centers still have a finite nearest bin.
    """
    df = freqs[1] - freqs[0] if freqs.size > 1 else 1.0
    log_f = np.log(np.maximum(freqs, 0.5 * df))
    # half-power points at center * exp(+-h): center * 2 sinh(h) = center / q
    h = math.asinh(0.5 / q_factor)
    sigma = h / math.sqrt(math.log(2.0))
    d = log_f[None, :] - np.log(centers)[:, None]
    logg = -0.5 * (d / sigma) ** 2
    logg -= logg.max(axis=1, keepdims=True)
    return np.exp(logg)


KERNELS: dict[str, Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = {
    "gaussian-log": gaussian_log_kernel,
}


@dataclass(frozen=True)
class CochlearFilterbank:
    kernels: np.ndarray
    grid: AngleGrid
    q_factor: float
    centers: np.ndarray
    fft_size: int
    sample_rate: float
    kernel_name: str = "gaussian-log"
    clipped: tuple = field(default=())

    @property
    def freq_axis(self) -> np.ndarray:
        return freq_axis(self.fft_size, self.sample_rate)

    @property
    def mode_scale(self) -> np.ndarray:
        """``sqrt(theta_k)`` with theta in radians."""
        return np.sqrt(np.deg2rad(self.grid.angles))


def build_filterbank(
    grid: AngleGrid | None = None,
    fft_size: int = 512,
    sample_rate: float = 16000,
    q_factor: float = 4.0,
    kernel: str = "gaussian-log",
) -> CochlearFilterbank:
    """One real kernel per grid angle, centered at the tonotopic frequency.

    Centers at or above Nyquist are clipped to 0.95 * Nyquist with a
    :class:`FilterbankWarning`.
    """
    grid = angle_grid() if grid is None else grid
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError("fft_size must be a power of two")
    if not q_factor > 0:
        raise ValueError("q_factor must be positive")
    try:
        kernel_fn = KERNELS[kernel]
    except KeyError:
        raise ValueError(f"unknown kernel {kernel!r}; known: {sorted(KERNELS)}") from None

    nyquist = sample_rate / 2.0
    centers = grid.frequencies.copy()
    over = np.flatnonzero(centers >= nyquist)
    if over.size:
        warnings.warn(
            f"{over.size} center frequencies >= Nyquist ({nyquist:g} Hz) clipped to {0.95 * nyquist:g} Hz",
            FilterbankWarning,
            stacklevel=2,
        )
        centers[over] = 0.95 * nyquist
    if np.any(centers >= nyquist) or np.any(centers <= 0):
        raise ValueError("center frequencies outside (0, Nyquist)")

    gains = kernel_fn(centers, freq_axis(fft_size, sample_rate), float(q_factor))
    return CochlearFilterbank(
        kernels=gains,
        grid=grid,
        q_factor=float(q_factor),
        centers=centers,
        fft_size=fft_size,
        sample_rate=float(sample_rate),
        kernel_name=kernel,
        clipped=tuple(int(i) for i in over),
    )


def cochlear_modes(frame, bank: CochlearFilterbank) -> np.ndarray:
    """Per-angle filtered spectra.

    ``frame`` is a :class:`SpectralFrame`, a 1-D spectrum ``(bins,)`` giving
    modes of shape ``(angles, bins)``, or a stack ``(frames, bins)`` giving
    ``(frames, angles, bins)``.
    """
    p = np.asarray(getattr(frame, "bins", frame))
    if p.shape[-1] != bank.kernels.shape[1]:
        raise ValueError(
            f"spectrum has {p.shape[-1]} bins, filterbank expects {bank.kernels.shape[1]}"
        )
    weighted = bank.mode_scale[:, None] * bank.kernels
    return p[..., None, :] * weighted


def mode_energies(modes: np.ndarray) -> np.ndarray:
    """Energies ``X[k, t]`` from modes stacked as ``(frames, angles, bins)``."""
    modes = np.asarray(modes)
    if modes.ndim != 3:
        raise ValueError("expected modes of shape (frames, angles, bins)")
    return np.sum(np.abs(modes) ** 2, axis=-1).T


def frame_energies(spec_frames: np.ndarray, bank: CochlearFilterbank) -> np.ndarray:
    """Same result as ``mode_energies(cochlear_modes(...))`` without the 3-D temporary."""
    if spec_frames.shape[-1] != bank.kernels.shape[1]:
        raise ValueError("spectrum / filterbank bin count mismatch")
    power = np.ascontiguousarray(spec_frames.real**2 + spec_frames.imag**2)
    gains_sq = np.ascontiguousarray(bank.kernels**2)
    scale = np.deg2rad(bank.grid.angles)
    return kernels.mode_energies(power, gains_sq, scale)


def cochlear_energies(samples, spec: FrameSpec, bank: CochlearFilterbank) -> np.ndarray:
    """Frame, transform and filter a waveform; returns ``(angles, frames)``."""
    if bank.fft_size < spec.window_length:
        raise ValueError("fft_size must be at least the window length")
    if bank.sample_rate != spec.sample_rate:
        raise ValueError("filterbank and frame spec disagree on sample rate")
    return frame_energies(spectra(frame_signal(samples, spec), bank.fft_size), bank)
