"""Cochlear cepstrogram extraction, cepstral masking and contrastive pre-training."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .tonotopy import AngleGrid, angle_grid, place_to_frequency
from .cochlear_transform import FrameSpec, build_filterbank, cochlear_modes, frame_signal, mode_energies
from .cepstrogram import CCGram, ExtractorConfig, cfcc_lift, compute_ccgram, extract
from .augment import (
    MaskPolicy, MaskRecord, ViewPair, angle_mask, cepstral_mask, quefrency_mask, resize_nearest,
    sample_view_pair, znormalize_fold,
)
from .contrastive import (
    EmbeddingBatch, EncoderSpec, NTXentConfig, SSLConfig, cosine_similarity, encoder_forward,
    nt_xent_gradient, nt_xent_loss, train_simclr,
)
from .probe import (
    ProbeConfig, QuadrantLabel, evaluate, finetune, flatten_features, quadrant_label, train_linear_probe,
)
from .preprocess import AudioSegment, max_scale, remove_silence, resample, segment_3s
from .datasets import make_folds, read_ccgram, write_ccgram
