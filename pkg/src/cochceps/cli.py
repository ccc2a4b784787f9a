"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import MaskPolicy, apply_transform, resize_nearest, sample_view_pair, znormalize_fold, TRANSFORMS
from .cepstrogram import CCGram, extract
from .config import ConfigError, RunConfig, load_config
from .contrastive import EncoderSpec, encode, train_simclr
from .datasets import (
    ContainerError, Manifest, ManifestEntry, atomic_write_bytes, atomic_write_text, folds_text,
    make_folds, manifest_text, read_ccgram, read_checkpoint, read_folds, read_manifest, resolve,
    write_ccgram, write_checkpoint,
)
from .plot import pgm_bytes, to_gray
from .preprocess import preprocess_signal, read_wav, write_wav
from .probe import (
    FinetunedModel, ProbeModel, evaluate, finetune, head_forward, quadrant_label, train_linear_probe,
    write_report,
)

log = logging.getLogger("cochceps")

COMMANDS = ("preprocess", "extract", "augment-preview", "pretrain", "probe", "finetune", "eval", "folds", "plot")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# helpers

def _manifest(path) -> Manifest:
    try:
        return read_manifest(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _ccgram(path) -> CCGram:
    try:
        return read_ccgram(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except ContainerError as exc:
        raise DataError(f"{path}: {exc}") from None


def _checkpoint(path):
    try:
        return read_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except ContainerError as exc:
        raise DataError(f"{path}: {exc}") from None


def _hash_line(cfg: RunConfig) -> str:
    return f"config_hash={cfg.hash()}"


def _labelled(manifest_path, manifest: Manifest, speakers=None):
    """Load labelled CCGRAMs, optionally restricted to ``speakers``."""
    images, labels = [], []
    for e in manifest.entries:
        if speakers is not None and e.speaker_id not in speakers:
            continue
        if e.arousal is None or e.valence is None:
            continue
        images.append(_ccgram(resolve(manifest_path, e.path)).values)
        labels.append(int(quadrant_label(e.arousal, e.valence)))
    return images, np.asarray(labels, dtype=np.intp)


def _fold_roles(path, cfg: RunConfig) -> dict[str, list[str]]:
    try:
        folds = read_folds(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None
    r = cfg.rotation - 1
    if not 0 <= r < len(folds.rotations):
        raise DataError(f"{path}: rotation {cfg.rotation} not present")
    return folds.roles(r)


def _split_speakers(args, manifest: Manifest, cfg: RunConfig, train_roles):
    if args.folds is None:
        log.warning("no --folds given: training and evaluating on every speaker")
        every = set(manifest.speakers)
        return every, every
    roles = _fold_roles(args.folds, cfg)
    train = {s for role in train_roles for s in roles[role]}
    return train, set(roles["test"])


def _prepared(images, cfg: RunConfig) -> np.ndarray:
    """Fold z-normalisation then resize, flattened row-major."""
    normed, _ = znormalize_fold(images)
    size = cfg.image_size()
    rows = [(resize_nearest(x, *size) if size else x).ravel() for x in normed]
    return np.stack(rows)


def _encoder_from_checkpoint(tensors) -> tuple[EncoderSpec, dict]:
    layers = tuple(int(v) for v in tensors["meta.layers"])
    proj_hidden, proj_dim = (int(v) for v in tensors["meta.projector"])
    act = "relu" if int(tensors["meta.activation"][0]) == 0 else "identity"
    spec = EncoderSpec(layers, act, proj_hidden, proj_dim)
    weights = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
    return spec, weights


def _encoder_meta(spec: EncoderSpec) -> dict[str, np.ndarray]:
    _, hidden, dim = spec.projector_widths
    return {
        "meta.layers": np.asarray(spec.layers, dtype=np.float64),
        "meta.projector": np.asarray([hidden, dim], dtype=np.float64),
        "meta.activation": np.asarray([0.0 if spec.activation == "relu" else 1.0]),
    }


def _report(args, cfg, values):
    values = {"config_hash": cfg.hash(), **values}
    write_report(args.out, values, stream=sys.stdout)


# --------------------------------------------------------------------------
# commands

def cmd_preprocess(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pcfg = cfg.preprocess()
    entries = []
    for e in manifest.entries:
        src = resolve(args.inp, e.path)
        if not e.pre_separated:
            log.warning("%s: not marked pre_separated; source separation is not applied", src)
        try:
            x, rate = read_wav(src)
        except FileNotFoundError:
            raise DataError(f"{src}: no such file") from None
        except ValueError as exc:
            raise DataError(f"{src}: {exc}") from None
        segs = preprocess_signal(x, rate, pcfg, speaker_id=e.speaker_id, arousal=e.arousal,
                                 valence=e.valence, source=str(e.path))
        for i, seg in enumerate(segs):
            name = f"{Path(e.path).stem}_{i:04d}.wav"
            write_wav(out / name, seg.samples, seg.sample_rate)
            entries.append(ManifestEntry(name, e.speaker_id, e.arousal, e.valence, seg.duration, e.pre_separated))
        log.info("%s: %d segments", src, len(segs))
    text = f"# {_hash_line(cfg)}\n" + manifest_text(Manifest(entries, manifest.fold_scheme))
    atomic_write_text(out / "segments.tsv", text)
    print(f"{len(entries)} segments -> {out / 'segments.tsv'}")


def cmd_extract(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.extractor()
    bank = ecfg.filterbank()
    entries = []
    for e in manifest.entries:
        src = resolve(args.inp, e.path)
        try:
            x, rate = read_wav(src)
        except FileNotFoundError:
            raise DataError(f"{src}: no such file") from None
        if rate != cfg.sample_rate:
            raise DataError(f"{src}: sample rate {rate} != {cfg.sample_rate}; run preprocess first")
        try:
            ccg = extract(x, ecfg, bank=bank, source_id=Path(e.path).stem)
        except ValueError as exc:
            raise DataError(f"{src}: {exc}") from None
        name = f"{Path(e.path).stem}.ccg"
        write_ccgram(ccg, out / name)
        entries.append(ManifestEntry(name, e.speaker_id, e.arousal, e.valence, e.duration, e.pre_separated))
    text = f"# {_hash_line(cfg)}\n" + manifest_text(Manifest(entries, manifest.fold_scheme))
    atomic_write_text(out / "index.tsv", text)
    print(f"{len(entries)} cepstrograms -> {out / 'index.tsv'}")


def cmd_folds(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    try:
        folds = make_folds(manifest.speakers, cfg.fold_rotations, cfg.seed)
    except ValueError as exc:
        raise DataError(f"{args.inp}: {exc}") from None
    atomic_write_text(args.out, folds_text(folds))
    for r in range(len(folds.rotations)):
        roles = folds.roles(r)
        print(f"rotation {r + 1}: " + " ".join(f"{k}={len(v)}" for k, v in roles.items()))


def _preview_gray(values, records, policy, overlay: bool):
    mask = None
    if overlay:
        mask = np.zeros(values.shape, bool)
        for rec in records:
            mask[rec.cells(values.shape)] = True
    masked = values.copy()
    for rec in records:
        masked[rec.cells(values.shape)] = policy.fill_value
    return to_gray(masked, mask)


def cmd_augment_preview(args, cfg: RunConfig) -> None:
    ccg = _ccgram(args.inp)
    policy = cfg.mask_policy()
    pair = sample_view_pair(ccg.values, policy, np.random.default_rng(cfg.seed if args.seed is None else args.seed))
    g_i = _preview_gray(ccg.values, pair.masks[0], policy, True)
    g_j = _preview_gray(ccg.values, pair.masks[1], policy, True)
    sep = np.full((ccg.values.shape[0], 2), 255, np.uint8)
    out = args.out or str(Path(args.inp).with_suffix(".preview.pgm").name)
    comment = f"{_hash_line(cfg)}\nviews={pair.transforms[0]},{pair.transforms[1]}"
    atomic_write_bytes(out, pgm_bytes(np.hstack([g_i, sep, g_j]), comment))
    print(f"{pair.transforms[0]} | {pair.transforms[1]} -> {out}")


def cmd_plot(args, cfg: RunConfig) -> None:
    ccg = _ccgram(args.inp)
    policy = cfg.mask_policy()
    records = []
    if args.overlay:
        rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
        _, records = apply_transform(args.overlay, ccg.values, policy, rng)
    gray = _preview_gray(ccg.values, records, policy, bool(args.overlay))
    atomic_write_bytes(args.out, pgm_bytes(gray, _hash_line(cfg)))
    print(f"{ccg.values.shape[0]}x{ccg.values.shape[1]} -> {args.out}")


def cmd_pretrain(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    train_spk, _ = _split_speakers(args, manifest, cfg, ("pretrain", "validation"))
    images = [_ccgram(resolve(args.inp, e.path)).values for e in manifest.entries if e.speaker_id in train_spk]
    if len(images) < 2:
        raise DataError(f"{args.inp}: need at least two pre-training segments")
    try:
        normed, (mean, std) = znormalize_fold(images)
    except ValueError as exc:
        raise DataError(f"{args.inp}: {exc}") from None
    size = cfg.image_size() or normed[0].shape
    spec = cfg.encoder_spec(int(np.prod(size)))
    try:
        result = train_simclr(normed, cfg.mask_policy(), spec, cfg.ssl(), seed=cfg.seed)
    except (ValueError, FloatingPointError) as exc:
        raise DataError(f"pre-training diverged: {exc} (try a lower ssl_lr or a wider projector)") from None
    tensors = {**result.weights, **_encoder_meta(spec), "meta.norm": np.asarray([mean, std]),
               "meta.history": np.asarray(result.history)}
    write_checkpoint(args.out, tensors, cfg.digest())
    hist = "epoch\tloss\n" + "".join(f"{i + 1}\t{v!r}\n" for i, v in enumerate(result.history))
    atomic_write_text(str(args.out) + ".loss.tsv", f"# {_hash_line(cfg)}\n" + hist)
    print(f"{len(images)} segments, {cfg.ssl_epochs} epochs, loss {result.history[0]:.4f} -> "
          f"{result.history[-1]:.4f}; saved {args.out}")


def _features(tensors, images, cfg, flatten: bool):
    x = _prepared(images, cfg)
    if flatten:
        return x
    spec, weights = _encoder_from_checkpoint(tensors)
    if spec.input_dim != x.shape[1]:
        raise DataError(f"encoder expects {spec.input_dim} inputs, data has {x.shape[1]}")
    return encode(spec, weights, x)


def cmd_probe(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    train_spk, test_spk = _split_speakers(args, manifest, cfg, ("pretrain", "validation"))
    tensors = {}
    if not args.flatten:
        if args.model is None:
            raise UsageError("probe needs --model unless --flatten is given")
        tensors, _ = _checkpoint(args.model)
    tr_img, tr_y = _labelled(args.inp, manifest, train_spk)
    te_img, te_y = _labelled(args.inp, manifest, test_spk)
    if not tr_img or not te_img:
        raise DataError(f"{args.inp}: no labelled segments in the train or test split")
    x_tr = _features(tensors, tr_img, cfg, args.flatten)
    x_te = _features(tensors, te_img, cfg, args.flatten)
    model = train_linear_probe(x_tr, tr_y, cfg.probe(), seed=cfg.seed)
    m = evaluate(model, x_te, te_y)
    if args.save_model:
        enc = {k: v for k, v in tensors.items() if k.startswith(("encoder.", "meta."))}
        out = {**enc, "probe.weight": model.weight, "probe.bias": model.bias,
               "meta.flatten": np.asarray([1.0 if args.flatten else 0.0])}
        write_checkpoint(args.save_model, out, cfg.digest())
    _report(args, cfg, {"mode": "flatten" if args.flatten else "encoder", "n_train": len(tr_y), **m.as_dict()})


def cmd_finetune(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    train_spk, test_spk = _split_speakers(args, manifest, cfg, ("finetune",))
    tensors, _ = _checkpoint(args.model)
    spec, weights = _encoder_from_checkpoint(tensors)
    tr_img, tr_y = _labelled(args.inp, manifest, train_spk)
    te_img, te_y = _labelled(args.inp, manifest, test_spk)
    if not tr_img or not te_img:
        raise DataError(f"{args.inp}: no labelled segments in the fine-tune or test split")
    model, m = finetune(spec, weights, _prepared(tr_img, cfg), tr_y, _prepared(te_img, cfg), te_y,
                        head_hidden=cfg.head_widths(), config=cfg.finetune(), seed=cfg.seed)
    if args.save_model:
        out = {**model.encoder_weights, **model.head, **_encoder_meta(spec)}
        write_checkpoint(args.save_model, out, cfg.digest())
    _report(args, cfg, {"mode": "finetune", "n_train": len(tr_y), **m.as_dict()})


def cmd_eval(args, cfg: RunConfig) -> None:
    manifest = _manifest(args.inp)
    tensors, _ = _checkpoint(args.model)
    speakers = None
    if args.folds is not None:
        speakers = set(_fold_roles(args.folds, cfg)[args.role])
    images, y = _labelled(args.inp, manifest, speakers)
    if not images:
        raise DataError(f"{args.inp}: no labelled segments to evaluate")
    if "probe.weight" in tensors:
        flatten = bool(tensors.get("meta.flatten", np.zeros(1))[0])
        x = _features(tensors, images, cfg, flatten)
        model = ProbeModel(tensors["probe.weight"], tensors["probe.bias"])
    elif "head.0.weight" in tensors:
        spec, weights = _encoder_from_checkpoint(tensors)
        enc = {k: v for k, v in weights.items() if k.startswith("encoder.")}
        head = {k: v for k, v in weights.items() if k.startswith("head.")}
        model = FinetunedModel(spec, enc, head)
        x = _prepared(images, cfg)
    else:
        raise DataError(f"{args.model}: checkpoint has no classification head")
    m = evaluate(model, x, y)
    _report(args, cfg, {"mode": "eval", "role": args.role, **m.as_dict()})


HANDLERS = {
    "preprocess": cmd_preprocess,
    "extract": cmd_extract,
    "augment-preview": cmd_augment_preview,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "folds": cmd_folds,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cochceps", description="Cochlear cepstrogram SSL pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text, inp_help="input manifest", out=True, out_required=True):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument("--in", dest="inp", required=True, help=inp_help)
        if out:
            sp.add_argument("--out", required=out_required)
        return sp

    add("preprocess", "resample, scale, drop silence, cut 3 s segments", "raw audio manifest (TSV)")
    add("extract", "compute one CCGRAM per segment", "segment manifest (TSV)")
    sp = add("augment-preview", "render two masked views of a CCGRAM", ".ccg file", out_required=False)
    sp = add("pretrain", "contrastive pre-training", "CCGRAM index (TSV)")
    sp.add_argument("--folds")
    sp = add("probe", "linear probe on frozen features", "CCGRAM index (TSV)")
    sp.add_argument("--model")
    sp.add_argument("--folds")
    sp.add_argument("--flatten", action="store_true", help="probe flattened CCGRAMs instead of features")
    sp.add_argument("--save-model")
    sp = add("finetune", "fine-tune encoder and non-linear head", "CCGRAM index (TSV)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--folds")
    sp.add_argument("--save-model")
    sp = add("eval", "evaluate a probe or fine-tuned checkpoint", "CCGRAM index (TSV)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--folds")
    sp.add_argument("--role", default="test", choices=("pretrain", "validation", "finetune", "test"))
    add("folds", "speaker-independent fold rotations", "manifest (TSV)")
    sp = add("plot", "render a CCGRAM as binary PGM", ".ccg file")
    sp.add_argument("--overlay", choices=TRANSFORMS, help="draw masks of this transform in mid-gray")
    return p


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        return load_config(args.config, overrides)
    except FileNotFoundError as exc:
        raise DataError(f"{exc.filename}: no such file") from None
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = _resolve_config(args)
        log.info("config %s\n%s", cfg.hash(), cfg.to_text().rstrip())
        HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        if "usage:" not in str(exc):
            sys.stderr.write(parser.format_usage())
        return 1
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 0


def main() -> None:
    sys.exit(run())
