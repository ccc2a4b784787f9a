import struct

import numpy as np
import pytest

from cochceps.cepstrogram import CCGram
from cochceps.datasets import (
    ContainerError, CorruptMagicError, DimensionOverflowError, Manifest, ManifestEntry, TruncatedPayloadError,
    decode_ccgram, decode_checkpoint, encode_ccgram, encode_checkpoint, folds_text, make_folds, read_ccgram,
    read_checkpoint, read_folds, read_manifest, resolve, write_ccgram, write_checkpoint, write_manifest,
)
from cochceps.tonotopy import angle_grid

HASH = bytes(range(16))


def speakers(n):
    return [f"spk{i:02d}" for i in range(n)]


def role_sizes(assign, r):
    roles = assign.roles(r)
    return tuple(len(roles[k]) for k in ("pretrain", "validation", "finetune", "test"))


def test_folds_32_speakers():
    f = make_folds(speakers(32), seed=11)
    assert len(f.rotations) == 5
    assert all(role_sizes(f, r) == (26, 2, 2, 2) for r in range(5))
    tested = [s for r in range(5) for s in f.roles(r)["test"]]
    assert len(set(tested)) == 10 == len(tested)
    for r in range(5):
        assert set(f.rotations[r]) == set(speakers(32))


def test_folds_minimum():
    f = make_folds(speakers(8), seed=0)
    assert all(role_sizes(f, r) == (2, 2, 2, 2) for r in range(5))
    with pytest.raises(ValueError):
        make_folds(speakers(7))
    with pytest.raises(ValueError):
        make_folds(speakers(8), rotations=0)


def test_folds_no_repeated_pairs_with_enough_speakers():
    f = make_folds(speakers(12), seed=2)
    for role in ("test", "validation", "finetune"):
        pairs = [frozenset(f.roles(r)[role]) for r in range(5)]
        assert len(set(pairs)) == 5


def test_folds_deterministic_and_seeded():
    assert make_folds(speakers(16), seed=4).rotations == make_folds(speakers(16), seed=4).rotations
    assert make_folds(speakers(16), seed=4).rotations != make_folds(speakers(16), seed=5).rotations


def test_folds_partners():
    spk = speakers(16)
    partners = {a: b for i in range(0, 16, 2) for a, b in ((spk[i], spk[i + 1]), (spk[i + 1], spk[i]))}
    f = make_folds(spk, seed=3, partners=partners)
    for r in range(5):
        for a, b in partners.items():
            assert f.role_of(r, a) == f.role_of(r, b)
    with pytest.raises(ValueError):
        make_folds(spk, partners={spk[0]: spk[1]})


def test_folds_text_round_trip(tmp_path):
    f = make_folds(speakers(10), seed=1)
    p = tmp_path / "folds.tsv"
    p.write_text("# seed=1\n" + folds_text(f))
    assert read_folds(p).rotations == f.rotations


def test_ccg_layout():
    values = np.arange(6, dtype=np.float64).reshape(2, 3)
    data = encode_ccgram(CCGram(values, None, "", HASH))
    assert data[:4] == b"CCG1"
    assert struct.unpack_from("<III", data, 4) == (2, 3, 0)
    assert data[16:32] == HASH
    assert np.frombuffer(data[32:], "<f8").tolist() == list(range(6))


def test_ccg_default_size(tmp_path):
    cg = CCGram(np.zeros((20, 239)), angle_grid(), "x", HASH)
    write_ccgram(cg, tmp_path / "x.ccg")
    assert (tmp_path / "x.ccg").stat().st_size == 38272
    back = read_ccgram(tmp_path / "x.ccg")
    assert back.grid.spacing == 45 and back.grid.count == 20 and back.config_hash == HASH


def test_ccg_round_trip_bit_exact(rng, tmp_path):
    for i in range(200):
        shape = tuple(int(v) for v in rng.integers(1, 30, 2))
        bits = rng.integers(0, 2**63, size=shape, dtype=np.uint64) | (rng.integers(0, 2, size=shape, dtype=np.uint64) << 63)
        values = bits.view(np.float64)
        values[~np.isfinite(values)] = 0.0
        values.flat[0] = -0.0
        back = decode_ccgram(encode_ccgram(CCGram(values, None, "", HASH)))
        assert back.values.tobytes() == values.tobytes()
    assert np.signbit(back.values.flat[0])


def test_ccg_errors():
    good = encode_ccgram(CCGram(np.ones((3, 4)), None, "", HASH))
    with pytest.raises(CorruptMagicError):
        decode_ccgram(b"XXXX" + good[4:])
    with pytest.raises(TruncatedPayloadError):
        decode_ccgram(good[:-1])
    with pytest.raises(TruncatedPayloadError):
        decode_ccgram(good[:20])
    with pytest.raises(DimensionOverflowError):
        decode_ccgram(good[:4] + struct.pack("<II", 2**31, 2**31) + good[12:])
    with pytest.raises(DimensionOverflowError):
        decode_ccgram(good[:4] + struct.pack("<II", 0, 4) + good[12:])
    with pytest.raises(ContainerError):
        decode_ccgram(good + b"\0")
    assert issubclass(TruncatedPayloadError, ValueError)


def test_truncated_file_leaves_no_value(tmp_path):
    p = tmp_path / "t.ccg"
    write_ccgram(CCGram(np.ones((2, 2)), None, "", HASH), p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_ccgram(p)


def test_checkpoint_round_trip(rng, tmp_path):
    tensors = {"encoder.0.weight": rng.standard_normal((5, 3)), "encoder.0.bias": rng.standard_normal(3),
               "meta.scalar": np.array(2.5), "empty": np.zeros((0, 4))}
    write_checkpoint(tmp_path / "m.ckp", tensors, HASH)
    back, h = read_checkpoint(tmp_path / "m.ckp")
    assert h == HASH and set(back) == set(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape and back[k].tobytes() == tensors[k].tobytes()
    data = encode_checkpoint(tensors, HASH)
    assert data[:4] == b"CKP1" and struct.unpack_from("<I", data, 4) == (4,)
    with pytest.raises(TruncatedPayloadError):
        decode_checkpoint(data[:-8])
    with pytest.raises(CorruptMagicError):
        decode_checkpoint(b"CCG1" + data[4:])


def test_atomic_write_mode(tmp_path):
    import os
    write_checkpoint(tmp_path / "m.ckp", {"a": np.ones(2)})
    umask = os.umask(0)
    os.umask(umask)
    assert (tmp_path / "m.ckp").stat().st_mode & 0o777 == 0o666 & ~umask
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckp"]


def test_manifest_round_trip(tmp_path):
    m = Manifest([ManifestEntry("a/1.wav", "s1", 3, 2, 3.0, True),
                  ManifestEntry("/abs/2.wav", "s2", None, 5, None, False)], fold_scheme="v2")
    p = tmp_path / "m.tsv"
    write_manifest(m, p)
    back = read_manifest(p)
    assert back.entries == m.entries and back.fold_scheme == "v2" and back.speakers == ["s1", "s2"]
    assert resolve(p, "a/1.wav") == tmp_path / "a" / "1.wav"
    assert resolve(p, "/abs/2.wav").as_posix() == "/abs/2.wav"


def test_manifest_validation(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("path\tspeaker_id\tarousal\n1.wav\ts1\t7\n")
    with pytest.raises(ValueError):
        read_manifest(p)
    p.write_text("path\tspeaker_id\n1.wav\t\n")
    with pytest.raises(ValueError):
        read_manifest(p)
