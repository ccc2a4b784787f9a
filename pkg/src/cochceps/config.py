"""Run configuration: ``key = value`` files mirroring every module default."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import MaskPolicy
from .cepstrogram import ExtractorConfig
from .cochlear_transform import FrameSpec
from .contrastive import EncoderSpec, SSLConfig
from .preprocess import PreprocessConfig
from .probe import ProbeConfig

ENV_VAR = "COCHCEPS_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # framing / extraction
    sample_rate: int = 16000
    window_ms: float = 25.0
    overlap_fraction: float = 0.5
    window_shape: str = "hamming"
    grid_spacing: float = 45.0
    grid_count: int = 20
    q_factor: float = 4.0
    kernel: str = "gaussian-log"
    eps_floor: float = 1e-10
    lift_axis: str = "frames"
    n_quefrency: int = 0  # 0 keeps all K coefficients
    # preprocessing
    vad_threshold_ratio: float = 0.1
    vad_merge_ms: float = 100.0
    segment_seconds: float = 3.0
    min_segment_seconds: float = 1.0
    # augmentation
    mask_phi: int = 2
    mask_q: int = 5
    mask_fill: float = 0.0
    resize_rows: int = 239
    resize_cols: int = 239
    # encoder / projector
    encoder_hidden: str = "128"
    feature_dim: int = 64
    projector_hidden: int = 0  # 0 -> feature_dim
    projector_dim: int = 256
    activation: str = "relu"
    # pre-training
    temperature: float = 0.07
    ssl_epochs: int = 50
    ssl_batch_size: int = 64
    ssl_lr: float = 0.1
    ssl_momentum: float = 0.9
    ssl_weight_decay: float = 1e-6
    ssl_warmup_fraction: float = 0.1
    # probing / fine-tuning
    probe_lr: float = 1e-4
    probe_epochs: int = 50
    probe_batch_size: int = 16
    probe_weight_decay: float = 1e-6
    finetune_lr: float = 5e-6
    finetune_epochs: int = 50
    finetune_batch_size: int = 16
    head_hidden: str = "64"
    # folds / reproducibility
    fold_rotations: int = 5
    rotation: int = 1
    seed: int = 0

    # -- derived objects -------------------------------------------------
    def frame_spec(self) -> FrameSpec:
        return FrameSpec(self.window_ms, self.overlap_fraction, self.window_shape, self.sample_rate)

    def extractor(self) -> ExtractorConfig:
        return ExtractorConfig(
            frame_spec=self.frame_spec(),
            grid_spacing=self.grid_spacing,
            grid_count=self.grid_count,
            q_factor=self.q_factor,
            kernel=self.kernel,
            eps_floor=self.eps_floor,
            lift_axis=self.lift_axis,
            n_quefrency=self.n_quefrency or None,
        )

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(
            target_rate=self.sample_rate,
            frame_spec=self.frame_spec(),
            threshold_ratio=self.vad_threshold_ratio,
            merge_gap_ms=self.vad_merge_ms,
            segment_seconds=self.segment_seconds,
            min_segment_seconds=self.min_segment_seconds,
        )

    def mask_policy(self) -> MaskPolicy:
        return MaskPolicy(self.mask_phi, self.mask_q, self.mask_fill)

    def image_size(self) -> tuple[int, int] | None:
        if self.resize_rows and self.resize_cols:
            return (self.resize_rows, self.resize_cols)
        return None

    def encoder_spec(self, input_dim: int) -> EncoderSpec:
        hidden = _int_list(self.encoder_hidden)
        return EncoderSpec(
            (input_dim, *hidden, self.feature_dim),
            self.activation,
            self.projector_hidden or None,
            self.projector_dim,
        )

    def ssl(self) -> SSLConfig:
        return SSLConfig(
            epochs=self.ssl_epochs,
            batch_size=self.ssl_batch_size,
            learning_rate=self.ssl_lr,
            momentum=self.ssl_momentum,
            weight_decay=self.ssl_weight_decay,
            warmup_fraction=self.ssl_warmup_fraction,
            temperature=self.temperature,
            image_size=self.image_size(),
        )

    def probe(self) -> ProbeConfig:
        return ProbeConfig(self.probe_lr, self.probe_epochs, self.probe_batch_size, self.probe_weight_decay)

    def finetune(self) -> ProbeConfig:
        return ProbeConfig(self.finetune_lr, self.finetune_epochs, self.finetune_batch_size,
                           self.probe_weight_decay)

    def head_widths(self) -> tuple[int, ...]:
        return _int_list(self.head_hidden)

    # -- text form -------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> bytes:
        return hashlib.blake2b(self.to_text().encode(), digest_size=16).digest()

    def hash(self) -> str:
        return self.digest().hex()

    def with_overrides(self, pairs: dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        unknown = sorted(set(pairs) - set(types))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {}
        for key, raw in pairs.items():
            default = getattr(self, key)
            try:
                values[key] = type(default)(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return replace(self, **values)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then ``$COCHCEPS_CONFIG``, then ``path``, then ``overrides``."""
    cfg = RunConfig()
    env = os.environ.get(ENV_VAR)
    for p in (env, path):
        if p:
            p = Path(p)
            cfg = cfg.with_overrides(parse_config_text(p.read_text(), str(p)))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
