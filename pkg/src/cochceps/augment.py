"""Cepstral masking augmentations and view-pair sampling.

Three transforms act on a CCGRAM image (rows = cochlear angles, columns =
quefrency indexes):

* angle masking: ``Phi`` bands of rows, each ``phi ~ U{0..Phi}`` rows wide;
* quefrency masking: ``Q`` bands of columns, each ``q ~ U{0..Q}`` wide;
* cepstral masking: angle masking followed by quefrency masking.

A band of width ``w`` on an axis of length ``n`` starts uniformly in
``{0..n-w}``; widths are capped at ``n``. Bands may overlap.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cepstrogram import CCGram

TRANSFORMS = ("angle", "quefrency", "cepstral")


@dataclass(frozen=True)
class MaskPolicy:
    Phi: int = 2
    Q: int = 5
    fill_value: float = 0.0

    def __post_init__(self):
        if self.Phi < 0 or self.Q < 0:
            raise ValueError("mask parameters must be non-negative")


@dataclass(frozen=True)
class MaskRecord:
    axis: str
    start_index: int
    width: int

    def cells(self, shape: tuple[int, int]) -> tuple[slice, slice]:
        band = slice(self.start_index, self.start_index + self.width)
        return (band, slice(None)) if self.axis == "angle" else (slice(None), band)


@dataclass
class ViewPair:
    view_i: CCGram | np.ndarray
    view_j: CCGram | np.ndarray
    transforms: tuple[str, str]
    masks: tuple[list[MaskRecord], list[MaskRecord]]
    rng_seed: int | None = None


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _unwrap(x):
    if isinstance(x, CCGram):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _rewrap(x, values):
    return x.with_values(values) if isinstance(x, CCGram) else values


def _draw_bands(axis: str, length: int, count: int, rng: np.random.Generator) -> list[MaskRecord]:
    records = []
    for _ in range(count):
        width = min(int(rng.integers(0, count + 1)), length)
        start = int(rng.integers(0, length - width + 1))
        records.append(MaskRecord(axis, start, width))
    return records


def apply_masks(values: np.ndarray, records, fill_value: float = 0.0) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    for rec in records:
        out[rec.cells(out.shape)] = fill_value
    return out


def angle_mask(ccgram, policy: MaskPolicy = MaskPolicy(), rng=None):
    """Zero ``policy.Phi`` random row bands. Returns ``(masked, records)``."""
    rng = _rng(rng)
    values = _unwrap(ccgram)
    records = _draw_bands("angle", values.shape[0], policy.Phi, rng)
    return _rewrap(ccgram, apply_masks(values, records, policy.fill_value)), records


def quefrency_mask(ccgram, policy: MaskPolicy = MaskPolicy(), rng=None):
    """Zero ``policy.Q`` random column bands. Returns ``(masked, records)``."""
    rng = _rng(rng)
    values = _unwrap(ccgram)
    records = _draw_bands("quefrency", values.shape[1], policy.Q, rng)
    return _rewrap(ccgram, apply_masks(values, records, policy.fill_value)), records


def cepstral_mask(ccgram, policy: MaskPolicy = MaskPolicy(), rng=None):
    rng = _rng(rng)
    once, rec_a = angle_mask(ccgram, policy, rng)
    twice, rec_q = quefrency_mask(once, policy, rng)
    return twice, rec_a + rec_q


_TRANSFORM_FNS = {"angle": angle_mask, "quefrency": quefrency_mask, "cepstral": cepstral_mask}


def apply_transform(name: str, ccgram, policy: MaskPolicy, rng):
    return _TRANSFORM_FNS[name](ccgram, policy, rng)


def sample_view_pair(ccgram, policy: MaskPolicy = MaskPolicy(), rng=None) -> ViewPair:
    """Two views, each from a transform drawn uniformly from the masking family.

    Draw order on the stream: tag for view i, tag for view j, masks of view i,
    masks of view j. ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = _rng(rng)
    t_i = TRANSFORMS[int(rng.integers(0, 3))]
    t_j = TRANSFORMS[int(rng.integers(0, 3))]
    v_i, m_i = apply_transform(t_i, ccgram, policy, rng)
    v_j, m_j = apply_transform(t_j, ccgram, policy, rng)
    return ViewPair(v_i, v_j, (t_i, t_j), (m_i, m_j), seed)


def sample_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, e.g. ``(seed, epoch, sample)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def znormalize_fold(images):
    """Pool mean and population std over every cell of every image in a fold.

    Returns ``(normalized_images, (mean, std))`` with the images in the same
    container type they came in.
    """
    images = list(images)
    if not images:
        raise ValueError("empty fold")
    arrays = [_unwrap(im) for im in images]
    flat = np.concatenate([a.ravel() for a in arrays])
    mean = float(flat.mean())
    std = float(flat.std())
    if not std > 0:
        raise ValueError("fold has zero standard deviation")
    out = [_rewrap(im, (a - mean) / std) for im, a in zip(images, arrays)]
    return out, (mean, std)


def resize_nearest(ccgram, target_rows: int = 239, target_cols: int = 239):
    """``out[r, c] = in[r * A // rows, c * M // cols]``."""
    values = _unwrap(ccgram)
    if values.size == 0:
        raise ValueError("empty image")
    if values.shape == (target_rows, target_cols):
        return _rewrap(ccgram, values.copy())
    return _rewrap(ccgram, kernels.resize_nearest(values, int(target_rows), int(target_cols)))


def prepare_view(ccgram, transform: str | None, policy: MaskPolicy, rng,
                 size: tuple[int, int] | None = (239, 239)):
    """Mask at native resolution, then resize. ``transform=None`` skips masking."""
    values = _unwrap(ccgram)
    records: list[MaskRecord] = []
    if transform is not None:
        values, records = apply_transform(transform, values, policy, rng)
    if size is not None:
        values = resize_nearest(values, *size)
    return values, records
