"""Manifests, speaker-independent folds and binary containers.

CCG1 layout (little-endian)::

    b"CCG1" | u32 rows | u32 cols | u32 grid spacing (millidegrees)
    | 16-byte config hash | rows*cols float64, row-major

CKP1 layout (little-endian)::

    b"CKP1" | u32 tensor count | 16-byte config hash
    | per tensor: u16 name length | utf-8 name | u32 ndim | u32 dims...
      | prod(dims) float64, row-major
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cepstrogram import CCGram
from .tonotopy import AngleGrid

CCG_MAGIC = b"CCG1"
CKP_MAGIC = b"CKP1"
_CCG_HEADER = struct.Struct("<4sIII16s")
_MAX_CELLS = 1 << 32
ROLES = ("pretrain", "validation", "finetune", "test")


class ContainerError(ValueError):
    pass


class CorruptMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class DimensionOverflowError(ContainerError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# CCG1

def encode_ccgram(ccgram: CCGram) -> bytes:
    values = np.asarray(ccgram.values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("CCGRAM must be 2-D")
    rows, cols = values.shape
    if not (0 < rows < 2**32 and 0 < cols < 2**32) or rows * cols >= _MAX_CELLS:
        raise DimensionOverflowError(f"dimensions {rows}x{cols} do not fit the container")
    spacing = 0 if ccgram.grid is None else int(round(ccgram.grid.spacing * 1000))
    h = bytes(ccgram.config_hash)
    if len(h) != 16:
        raise ValueError("config hash must be 16 bytes")
    header = _CCG_HEADER.pack(CCG_MAGIC, rows, cols, spacing, h)
    return header + values.astype("<f8", copy=False).tobytes(order="C")


def decode_ccgram(data: bytes, source_id: str = "") -> CCGram:
    if len(data) < 4 or data[:4] != CCG_MAGIC:
        raise CorruptMagicError("not a CCG1 container")
    if len(data) < _CCG_HEADER.size:
        raise TruncatedPayloadError("truncated CCG1 header")
    _, rows, cols, spacing, h = _CCG_HEADER.unpack_from(data)
    if rows == 0 or cols == 0 or rows * cols >= _MAX_CELLS:
        raise DimensionOverflowError(f"implausible dimensions {rows}x{cols}")
    need = _CCG_HEADER.size + rows * cols * 8
    if len(data) < need:
        raise TruncatedPayloadError(f"payload has {len(data) - _CCG_HEADER.size} bytes, expected {need - _CCG_HEADER.size}")
    if len(data) > need:
        raise ContainerError("trailing bytes after CCG1 payload")
    values = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=_CCG_HEADER.size)
    values = values.astype(np.float64).reshape(rows, cols)
    grid = None
    if spacing:
        try:
            grid = AngleGrid(spacing / 1000.0, rows)
        except ValueError:
            grid = None
    return CCGram(values, grid, source_id, h)


def write_ccgram(ccgram: CCGram, path) -> None:
    atomic_write_bytes(path, encode_ccgram(ccgram))


def read_ccgram(path) -> CCGram:
    path = Path(path)
    return decode_ccgram(path.read_bytes(), source_id=path.stem)


# --------------------------------------------------------------------------
# CKP1

def encode_checkpoint(tensors: dict[str, np.ndarray], config_hash: bytes = b"\x00" * 16) -> bytes:
    if len(config_hash) != 16:
        raise ValueError("config hash must be 16 bytes")
    parts = [CKP_MAGIC, struct.pack("<I", len(tensors)), bytes(config_hash)]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], bytes]:
    if data[:4] != CKP_MAGIC:
        raise CorruptMagicError("not a CKP1 container")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayloadError("truncated CKP1 container")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    config_hash = take(16)
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if size >= _MAX_CELLS:
            raise DimensionOverflowError(f"tensor {name} too large")
        arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        tensors[name] = arr.reshape(dims)
    if pos != len(data):
        raise ContainerError("trailing bytes after CKP1 payload")
    return tensors, config_hash


def write_checkpoint(path, tensors: dict[str, np.ndarray], config_hash: bytes = b"\x00" * 16) -> None:
    atomic_write_bytes(path, encode_checkpoint(tensors, config_hash))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], bytes]:
    return decode_checkpoint(Path(path).read_bytes())


# --------------------------------------------------------------------------
# manifests

MANIFEST_FIELDS = ("path", "speaker_id", "arousal", "valence", "duration", "pre_separated")


@dataclass
class ManifestEntry:
    path: str
    speaker_id: str
    arousal: int | None = None
    valence: int | None = None
    duration: float | None = None
    pre_separated: bool = True

    def __post_init__(self):
        if not self.speaker_id:
            raise ValueError(f"{self.path}: empty speaker_id")
        for name in ("arousal", "valence"):
            r = getattr(self, name)
            if r is not None and not 1 <= r <= 5:
                raise ValueError(f"{self.path}: {name} {r} outside [1, 5]")


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    fold_scheme: str = "v1"
    extra_fields: tuple[str, ...] = ()

    @property
    def speakers(self) -> list[str]:
        return list(dict.fromkeys(e.speaker_id for e in self.entries))

    def __len__(self) -> int:
        return len(self.entries)


def _opt_int(s: str):
    s = s.strip()
    return None if s in ("", "NA", "-") else int(s)


def _opt_float(s: str):
    s = s.strip()
    return None if s in ("", "NA", "-") else float(s)


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "y"):
        return True
    if v in ("0", "false", "no", "n", ""):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def read_manifest(path) -> Manifest:
    """Tab-separated manifest with a header; relative paths resolve against its folder."""
    path = Path(path)
    fold_scheme = "v1"
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip()]
    comments = [ln for ln in lines if ln.startswith("#")]
    for c in comments:
        if c.startswith("# fold_scheme="):
            fold_scheme = c.split("=", 1)[1].strip()
    rows = list(csv.DictReader([ln for ln in lines if not ln.startswith("#")], delimiter="\t"))
    entries = []
    for i, row in enumerate(rows, start=2):
        missing = [f for f in ("path", "speaker_id") if not row.get(f)]
        if missing:
            raise ValueError(f"{path}:{i}: missing {', '.join(missing)}")
        entries.append(ManifestEntry(
            path=row["path"],
            speaker_id=row["speaker_id"],
            arousal=_opt_int(row.get("arousal", "") or ""),
            valence=_opt_int(row.get("valence", "") or ""),
            duration=_opt_float(row.get("duration", "") or ""),
            pre_separated=_parse_bool(row.get("pre_separated", "1") or "1"),
        ))
    return Manifest(entries, fold_scheme)


def manifest_text(manifest: Manifest) -> str:
    out = [f"# fold_scheme={manifest.fold_scheme}", "\t".join(MANIFEST_FIELDS)]
    for e in manifest.entries:
        out.append("\t".join([
            e.path,
            e.speaker_id,
            "" if e.arousal is None else str(e.arousal),
            "" if e.valence is None else str(e.valence),
            "" if e.duration is None else f"{e.duration:.6f}",
            "1" if e.pre_separated else "0",
        ]))
    return "\n".join(out) + "\n"


def write_manifest(manifest: Manifest, path) -> None:
    atomic_write_text(path, manifest_text(manifest))


def resolve(manifest_path, entry_path: str) -> Path:
    p = Path(entry_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# --------------------------------------------------------------------------
# folds

@dataclass
class FoldAssignment:
    """``rotations[r][speaker] -> role`` for ``r = 0..R-1``."""

    rotations: list[dict[str, str]]
    seed: int = 0

    def roles(self, rotation: int) -> dict[str, list[str]]:
        out = {role: [] for role in ROLES}
        for spk, role in self.rotations[rotation].items():
            out[role].append(spk)
        return out

    def role_of(self, rotation: int, speaker: str) -> str:
        return self.rotations[rotation][speaker]


def make_folds(speakers, rotations: int = 5, seed: int = 0, partners: dict[str, str] | None = None) -> FoldAssignment:
    """Speaker-independent role rotations.

    After a seeded shuffle, rotation ``r`` (0-based) gives shuffled positions
    ``2r, 2r+1`` to test, the next two to validation and the two after that
    to fine-tuning (indexes wrap), and everyone else to pre-training.
    With ``partners`` the shuffle moves whole dyads so partners share a role.
    """
    speakers = list(dict.fromkeys(speakers))
    if len(speakers) < 8:
        raise ValueError(f"need at least 8 speakers, got {len(speakers)}")
    if rotations < 1:
        raise ValueError("need at least one rotation")
    rng = np.random.default_rng(seed)
    if partners:
        groups, seen = [], set()
        for s in speakers:
            if s in seen:
                continue
            p = partners.get(s)
            if p is None or p not in speakers or partners.get(p) != s:
                raise ValueError(f"speaker {s} has no reciprocal partner")
            groups.append([s, p])
            seen.update((s, p))
        order = [s for gi in rng.permutation(len(groups)) for s in groups[gi]]
    else:
        order = [speakers[i] for i in rng.permutation(len(speakers))]
    n = len(order)
    result = []
    for r in range(rotations):
        roles = dict.fromkeys(order, "pretrain")
        for offset, role in ((0, "test"), (2, "validation"), (4, "finetune")):
            for j in range(2):
                roles[order[(2 * r + offset + j) % n]] = role
        result.append(roles)
    return FoldAssignment(result, seed)


def folds_text(folds: FoldAssignment) -> str:
    lines = ["rotation\tspeaker_id\trole"]
    for r, roles in enumerate(folds.rotations, start=1):
        for spk in sorted(roles):
            lines.append(f"{r}\t{spk}\t{roles[spk]}")
    return "\n".join(lines) + "\n"


def read_folds(path) -> FoldAssignment:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader((ln for ln in fh if ln.strip() and not ln.startswith("#")), delimiter="\t"))
    n_rot = max(int(r["rotation"]) for r in rows) if rows else 0
    rotations: list[dict[str, str]] = [{} for _ in range(n_rot)]
    for row in rows:
        if row["role"] not in ROLES:
            raise ValueError(f"{path}: unknown role {row['role']!r}")
        rotations[int(row["rotation"]) - 1][row["speaker_id"]] = row["role"]
    return FoldAssignment(rotations)
