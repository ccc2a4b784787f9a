"""Cochlear cepstrogram (CCGRAM) assembly.

Log mode energies are lifted to the cepstral domain with the cosine sum::

    CFCC(m) = sqrt(2/K) * sum_{k=1..K} log X_k * cos(pi k / K * (m - 1/2)),  m = 1..M

By default the sum runs over the K frames of each angle's energy track, so
the image has one row per cochlear angle and one column per quefrency index
(20 x 239 for a 3 s, 16 kHz segment). ``lift_axis="modes"`` lifts across the
angles of each frame instead, giving quefrency rows and frame columns.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cochlear_transform import CochlearFilterbank, FrameSpec, build_filterbank, cochlear_energies
from .tonotopy import AngleGrid

LIFT_AXES = ("frames", "modes")


@dataclass
class CCGram:
    values: np.ndarray
    grid: AngleGrid | None = None
    source_id: str = ""
    config_hash: bytes = field(default=b"\x00" * 16)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "CCGram":
        return CCGram(values, self.grid, self.source_id, self.config_hash)


def cfcc_lift(log_energy, n_out: int | None = None) -> np.ndarray:
    """Cosine-lift one track of ``K`` log energies to ``n_out`` coefficients.

    A 2-D input is lifted row by row.
    """
    x = np.asarray(log_energy, dtype=np.float64)
    one_d = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] < 1:
        raise ValueError("expected a non-empty 1-D or 2-D array")
    if not np.all(np.isfinite(x2)):
        raise ValueError("non-finite log energy")
    n_out = x2.shape[1] if n_out is None else int(n_out)
    if n_out < 1:
        raise ValueError("need at least one output coefficient")
    out = kernels.lift_rows(x2, n_out)
    return out[0] if one_d else out


@dataclass(frozen=True)
class ExtractorConfig:
    frame_spec: FrameSpec = FrameSpec()
    grid_spacing: float = 45.0
    grid_count: int = 20
    q_factor: float = 4.0
    kernel: str = "gaussian-log"
    eps_floor: float = 1e-10
    lift_axis: str = "frames"
    n_quefrency: int | None = None

    def __post_init__(self):
        if self.lift_axis not in LIFT_AXES:
            raise ValueError(f"lift_axis must be one of {LIFT_AXES}")
        if not self.eps_floor > 0:
            raise ValueError("eps_floor must be positive")

    @property
    def grid(self) -> AngleGrid:
        return AngleGrid(self.grid_spacing, self.grid_count)

    def filterbank(self) -> CochlearFilterbank:
        fs = self.frame_spec
        return build_filterbank(self.grid, fs.fft_size, fs.sample_rate, self.q_factor, self.kernel)

    def fingerprint(self) -> bytes:
        fs = self.frame_spec
        text = (
            f"sr={fs.sample_rate};win={fs.window_ms!r};ov={fs.overlap_fraction!r};"
            f"shape={fs.window_shape};fft={fs.fft_size};spacing={self.grid_spacing!r};"
            f"count={self.grid_count};q={self.q_factor!r};kernel={self.kernel};"
            f"eps={self.eps_floor!r};axis={self.lift_axis};nq={self.n_quefrency}"
        )
        return hashlib.blake2b(text.encode(), digest_size=16).digest()


def lift_energies(energies: np.ndarray, eps_floor: float = 1e-10, lift_axis: str = "frames",
                  n_quefrency: int | None = None) -> np.ndarray:
    log_e = np.log(np.maximum(energies, eps_floor))
    if lift_axis == "frames":
        return cfcc_lift(log_e, n_quefrency)
    if lift_axis == "modes":
        return cfcc_lift(log_e.T, n_quefrency).T
    raise ValueError(f"lift_axis must be one of {LIFT_AXES}")


def compute_ccgram(segment, frame_spec: FrameSpec | None = None, bank: CochlearFilterbank | None = None,
                   eps_floor: float = 1e-10, *, lift_axis: str = "frames",
                   n_quefrency: int | None = None, source_id: str = "") -> CCGram:
    """frame -> spectrum -> modes -> energies -> floor -> log -> lift."""
    cfg = ExtractorConfig(
        frame_spec=frame_spec or FrameSpec(),
        eps_floor=eps_floor,
        lift_axis=lift_axis,
        n_quefrency=n_quefrency,
        **({} if bank is None else {
            "grid_spacing": bank.grid.spacing,
            "grid_count": bank.grid.count,
            "q_factor": bank.q_factor,
            "kernel": bank.kernel_name,
        }),
    )
    return extract(segment, cfg, bank=bank, source_id=source_id)


def extract(segment, config: ExtractorConfig = ExtractorConfig(), *, bank: CochlearFilterbank | None = None,
            source_id: str = "") -> CCGram:
    bank = config.filterbank() if bank is None else bank
    energies = cochlear_energies(segment, config.frame_spec, bank)
    values = lift_energies(energies, config.eps_floor, config.lift_axis, config.n_quefrency)
    sid = source_id or str(getattr(segment, "segment_id", ""))
    return CCGram(values, bank.grid, sid, config.fingerprint())
