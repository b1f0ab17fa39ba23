"""Command line surface for the detection toolkit.

Every subcommand is a thin orchestration layer: manifests and config in,
archives / model containers / score dumps out. All numeric work happens
in the library modules. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .audio import load_manifest, read_wav, save_manifest, write_wav
from .augment import mix_at_snr
from .backend import LdaGaussianizer, train_gmm_em, train_plda_em
from .config import load_config
from .errors import (
    DataError,
    InsufficientData,
    InvalidConfig,
    MissingScores,
    ParseError,
    SpoofkitError,
    exit_code_for,
)
from .nnet import TrainSettings, XResNetConfig, build_xresnet, format_history, train
from .pipeline import DetectionPipeline
from .sad import SpeechActivityDetector, apply_mask, energy_frame_labels, save_segments
from .scoring import compute_eer
from .serialization import (
    load_backend_model,
    load_feature_archive,
    load_gmm_pair,
    load_sad_model,
    load_xresnet,
    save_backend_model,
    save_feature_archive,
    save_gmm_pair,
    save_sad_model,
    save_xresnet,
)

POOLING_CHOICES = ("avg", "interleaved")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the documented contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _mangled_root(rel_path) -> str:
    root, _ = os.path.splitext(rel_path.replace("\\", "__").replace("/", "__"))
    return root


def archive_name(rel_path, kind) -> str:
    """Flatten a manifest-relative path into one archive file name."""
    return f"{_mangled_root(rel_path)}.{kind}.spkf"


def _resolve(base_dir, rel_path) -> str:
    if os.path.isabs(rel_path):
        return rel_path
    return os.path.join(base_dir, rel_path)


def _archive_path(features_dir, rel_path, kind, command_hint) -> str:
    path = os.path.join(features_dir, archive_name(rel_path, kind))
    if not os.path.exists(path):
        raise DataError(
            f"missing feature archive {path}; run `{command_hint}` into {features_dir} first"
        )
    return path


def _load_features(features_dir, rel_path, kind, cfg, command_hint):
    matrix = load_feature_archive(_archive_path(features_dir, rel_path, kind, command_hint))
    matrix.frame_shift_s = cfg.features.frame_shift_s
    return matrix


def _for_each(entries, fn, jobs):
    """Apply fn to each entry, preserving manifest order.

    Returns (results, failures); results holds None at failed indices and
    failures lists (entry, exception) pairs in manifest order.
    """
    def wrapped(pair):
        index, entry = pair
        try:
            return index, fn(entry), None
        except (SpoofkitError, OSError) as exc:
            return index, None, exc

    results = [None] * len(entries)
    failures = []
    if jobs <= 1:
        rows = map(wrapped, enumerate(entries))
        for index, value, exc in rows:
            results[index] = value
            if exc is not None:
                failures.append((entries[index], exc))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for index, value, exc in pool.map(wrapped, enumerate(entries)):
                results[index] = value
                if exc is not None:
                    failures.append((entries[index], exc))
    return results, failures


def _report_failures(failures) -> int:
    for entry, exc in failures:
        print(f"error: {entry.path}: {exc}", file=sys.stderr)
    if not failures:
        return 0
    return max(exit_code_for(exc) for _, exc in failures)


def _write_log(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _sad_from_args(args, cfg):
    """Configured SAD estimator wrapping a loaded model, or None when
    masking is disabled. Raises when enabled but no model was given."""
    if not cfg.sad.enabled:
        return None
    model_path = getattr(args, "sad_model", None)
    if not model_path:
        raise InvalidConfig(
            "sad.enabled is true but no SAD model was given; "
            "pass --sad-model PATH or set sad.enabled=false"
        )
    model, _ = load_sad_model(model_path)
    s = cfg.sad
    det = SpeechActivityDetector(
        mvn_window_s=s.mvn_window_s,
        context_frames=s.context_frames,
        smooth_window_s=s.smooth_window_s,
        threshold=s.threshold,
        pad_s=s.pad_s,
    )
    det.model_ = model
    return det


def _masked_lfb(features_dir, entry, cfg, sad):
    lfb = _load_features(features_dir, entry.path, "lfb", cfg, "extract-features --kind lfb")
    if sad is None:
        return lfb
    mfcc = _load_features(features_dir, entry.path, "mfcc", cfg, "extract-features --kind mfcc")
    return apply_mask(lfb, sad.predict(mfcc))


def _nnet_config(cfg) -> XResNetConfig:
    n = cfg.nnet
    return XResNetConfig(
        width_multiplier=n.width_multiplier,
        se_enabled=n.se_enabled,
        se_reduction=n.se_reduction,
        embedding_dim=n.embedding_dim,
        input_dim=cfg.features.n_filters,
        stem_maxpool=n.stem_maxpool,
        alpha=n.alpha,
        margin_target=n.margin_target,
        margin_spoof=n.margin_spoof,
    )


def _labels(entries) -> np.ndarray:
    return np.array([1 if e.label == "spoof" else 0 for e in entries], dtype=np.int64)


# ---- commands ----


def _cmd_extract_features(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.out_dir, exist_ok=True)
    pipe = DetectionPipeline(cfg)
    extract = pipe.lfb if args.kind == "lfb" else pipe.mfcc

    def one(entry):
        feats = extract(read_wav(_resolve(base, entry.path)))
        save_feature_archive(os.path.join(args.out_dir, archive_name(entry.path, args.kind)), feats)

    _, failures = _for_each(manifest.entries, one, args.jobs)
    code = _report_failures(failures)
    print(f"extracted {len(manifest) - len(failures)} of {len(manifest)} {args.kind} archives")
    return code


def _cmd_train_sad(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    entries = manifest.filter(partition="train").entries
    if not entries:
        raise InsufficientData("manifest has no train-partition utterances")

    pipe = DetectionPipeline(cfg)
    f = cfg.features
    mfccs, labels = [], []
    for entry in entries:
        audio = read_wav(_resolve(base, entry.path))
        mfccs.append(pipe.mfcc(audio))
        labels.append(energy_frame_labels(audio, f.frame_len_s, f.frame_shift_s))

    s = cfg.sad
    det = SpeechActivityDetector(
        mvn_window_s=s.mvn_window_s,
        context_frames=s.context_frames,
        smooth_window_s=s.smooth_window_s,
        threshold=s.threshold,
        pad_s=s.pad_s,
        hidden_dims=s.hidden_dims,
        learning_rate=s.learning_rate,
        epochs=s.epochs,
        batch_size=s.batch_size,
        seed=args.seed,
    ).fit(mfccs, labels)

    save_sad_model(
        args.out_model,
        det.model_,
        extra_config={
            "seed": int(args.seed),
            "mvn_window_s": s.mvn_window_s,
            "context_frames": s.context_frames,
            "smooth_window_s": s.smooth_window_s,
            "threshold": s.threshold,
            "pad_s": s.pad_s,
        },
    )
    lines = [f"seed {args.seed}"]
    lines += [f"epoch {i} loss {float(loss)!r}" for i, loss in enumerate(det.loss_history_, 1)]
    _write_log(args.out_model + ".log", lines)
    final = f", final loss {float(det.loss_history_[-1])!r}" if det.loss_history_ else ""
    print(f"trained SAD on {len(entries)} utterances{final}")
    return 0


def _cmd_run_sad(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.out_dir, exist_ok=True)
    model, _ = load_sad_model(args.model)
    pipe = DetectionPipeline(cfg, sad_model=model)

    def one(entry):
        segments = pipe.sad_segments(read_wav(_resolve(base, entry.path)))
        out = os.path.join(args.out_dir, _mangled_root(entry.path) + ".segments.tsv")
        save_segments(segments, out)

    _, failures = _for_each(manifest.entries, one, args.jobs)
    code = _report_failures(failures)
    print(f"segmented {len(manifest) - len(failures)} of {len(manifest)} utterances")
    return code


def _cmd_augment(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.out_dir, exist_ok=True)
    out_manifest = os.path.join(args.out_dir, "augmented.tsv")
    if len(manifest) == 0:
        save_manifest(manifest, out_manifest)
        print("augmented 0 of 0 utterances")
        return 0

    noise_manifest = load_manifest(args.noise_manifest)
    noise_base = os.path.dirname(os.path.abspath(args.noise_manifest))
    if len(noise_manifest) == 0:
        raise InsufficientData("noise manifest is empty")
    noise_buffers = [read_wav(_resolve(noise_base, e.path)) for e in noise_manifest]

    snr_db = cfg.augment.snr_db if args.snr is None else args.snr
    seeds = np.random.default_rng(args.seed).integers(0, 2**31 - 1, size=len(manifest))

    def one(pair):
        index, entry = pair
        clean = read_wav(_resolve(base, entry.path))
        mixed = mix_at_snr(clean, noise_buffers[index % len(noise_buffers)], snr_db, int(seeds[index]))
        out_path = os.path.join(args.out_dir, entry.path)
        os.makedirs(os.path.dirname(out_path) or args.out_dir, exist_ok=True)
        write_wav(out_path, mixed)
        return entry

    indexed = list(enumerate(manifest.entries))
    results, failures = _for_each(indexed, one, args.jobs)
    code = _report_failures([(e, exc) for (_, e), exc in failures])
    save_manifest([e for e in results if e is not None], out_manifest)
    print(f"augmented {len(manifest) - len(failures)} of {len(manifest)} utterances at {snr_db} dB")
    return code


def _cmd_train_model(args) -> int:
    cfg = load_config(args.config, args.overrides)
    sad = _sad_from_args(args, cfg)
    train_manifest = load_manifest(args.train_manifest)
    dev_manifest = load_manifest(args.dev_manifest)
    train_entries = train_manifest.filter(partition="train").entries or train_manifest.entries
    dev_entries = dev_manifest.filter(partition="dev").entries or dev_manifest.entries
    if not train_entries:
        raise InsufficientData("train manifest is empty")
    if not dev_entries:
        raise InsufficientData("dev manifest is empty")

    train_feats = [_masked_lfb(args.features_dir, e, cfg, sad) for e in train_entries]
    dev_feats = [_masked_lfb(args.features_dir, e, cfg, sad) for e in dev_entries]

    model = build_xresnet(_nnet_config(cfg), seed=args.seed)
    t, o, a = cfg.training, cfg.optimizer, cfg.augment
    settings = TrainSettings(
        batch_size=t.batch_size,
        max_epochs=t.max_epochs,
        patience=t.patience,
        crop_frames=t.crop_frames,
        learning_rate=o.learning_rate,
        betas=(o.beta1, o.beta2),
        eps=o.eps,
        weight_decay=o.weight_decay,
        n_masks=a.n_masks,
        mask_max_width=a.mask_max_width,
    )
    model, history = train(
        model,
        train_feats,
        _labels(train_entries),
        dev_feats,
        _labels(dev_entries),
        settings,
        seed=args.seed,
    )
    save_xresnet(args.out_model, model, extra_config={"seed": int(args.seed)})
    text = format_history(history)
    _write_log(args.out_model + ".log", [f"seed {args.seed}", text.rstrip("\n")])
    print(text.rstrip("\n").splitlines()[-1])
    return 0


def _cmd_extract_embeddings(args) -> int:
    cfg = load_config(args.config, args.overrides)
    sad = _sad_from_args(args, cfg)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    model, _ = load_xresnet(args.model)
    shift = cfg.embedding.backend_train_shift if args.shift is None else args.shift
    pipe = DetectionPipeline(cfg, embedder=model)

    def one(entry):
        feats = _masked_lfb(args.features_dir, entry, cfg, sad)
        embs, _ = pipe.embeddings(feats, shift=shift)
        out = os.path.join(args.out_dir, archive_name(entry.path, "embedding"))
        save_feature_archive(out, embs, kind="embedding")

    _, failures = _for_each(manifest.entries, one, args.jobs)
    code = _report_failures(failures)
    print(f"embedded {len(manifest) - len(failures)} of {len(manifest)} utterances at shift {shift}")
    return code


def _cmd_train_backend(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    train_entries = manifest.filter(partition="train").entries
    dev_entries = manifest.filter(partition="dev").entries
    if not train_entries:
        raise InsufficientData("manifest has no train-partition utterances")
    if not dev_entries:
        raise InsufficientData("manifest has no dev-partition utterances for enrollment")

    def read_embeddings(entries):
        blocks, classes, labels = [], [], []
        for entry in entries:
            embs = _load_features(
                args.embeddings_dir, entry.path, "embedding", cfg, "extract-embeddings"
            ).values
            blocks.append(embs)
            classes += [entry.class_id] * len(embs)
            labels += [entry.label] * len(embs)
        return np.vstack(blocks), np.asarray(classes), np.asarray(labels)

    x_train, train_classes, _ = read_embeddings(train_entries)
    x_dev, _, dev_labels = read_embeddings(dev_entries)

    b = cfg.backend
    lda = LdaGaussianizer(out_dim=b.lda_dim).fit(x_train, train_classes)
    g_train = lda.transform(x_train)
    plda = train_plda_em(g_train, train_classes, q=b.plda_q, n_iters=b.plda_iters, seed=args.seed)

    g_dev = lda.transform(x_dev)
    if not (np.any(dev_labels == "pristine") and np.any(dev_labels == "spoof")):
        raise InsufficientData("dev partition needs both pristine and spoof utterances")
    pristine_stats = plda.enrollment_stats(g_dev[dev_labels == "pristine"])
    spoof_stats = plda.enrollment_stats(g_dev[dev_labels == "spoof"])

    save_backend_model(
        args.out_model, lda, plda, pristine_stats, spoof_stats,
        extra_config={"seed": int(args.seed)},
    )
    lines = [f"seed {args.seed}"]
    lines += [f"plda iter {i} ll {float(ll)!r}" for i, ll in enumerate(plda.ll_history)]
    _write_log(args.out_model + ".log", lines)
    n_classes = len(np.unique(train_classes))
    print(
        f"trained backend on {len(x_train)} windows, {n_classes} classes, "
        f"final ll {float(plda.ll_history[-1])!r}"
    )
    return 0


def _cmd_train_gmm(args) -> int:
    cfg = load_config(args.config, args.overrides)
    sad = _sad_from_args(args, cfg)
    manifest = load_manifest(args.manifest)
    train_entries = manifest.filter(partition="train").entries
    if not train_entries:
        raise InsufficientData("manifest has no train-partition utterances")

    frames = {"pristine": [], "spoof": []}
    for entry in train_entries:
        frames[entry.label].append(_masked_lfb(args.features_dir, entry, cfg, sad).values)
    for label, blocks in frames.items():
        if not blocks:
            raise InsufficientData(f"manifest has no {label} train utterances")

    b = cfg.backend
    spoof_gmm = train_gmm_em(
        np.vstack(frames["spoof"]), b.gmm_components, b.gmm_iters, seed=args.seed
    )
    pristine_gmm = train_gmm_em(
        np.vstack(frames["pristine"]), b.gmm_components, b.gmm_iters, seed=args.seed
    )
    save_gmm_pair(args.out_model, spoof_gmm, pristine_gmm, extra_config={"seed": int(args.seed)})
    lines = [f"seed {args.seed}"]
    lines += [f"spoof iter {i} ll {float(ll)!r}" for i, ll in enumerate(spoof_gmm.ll_history)]
    lines += [f"pristine iter {i} ll {float(ll)!r}" for i, ll in enumerate(pristine_gmm.ll_history)]
    _write_log(args.out_model + ".log", lines)
    print(
        f"trained GMM pair with {b.gmm_components} components, final ll "
        f"{float(spoof_gmm.ll_history[-1])!r} / {float(pristine_gmm.ll_history[-1])!r}"
    )
    return 0


def _score_pipeline(args, cfg) -> DetectionPipeline:
    sad = _sad_from_args(args, cfg)
    sad_model = sad.model_ if sad is not None else None
    route = cfg.backend.route
    if route == "gmm":
        if not args.gmm_model:
            raise InvalidConfig("backend.route is gmm; pass --gmm-model PATH")
        spoof_gmm, pristine_gmm, _ = load_gmm_pair(args.gmm_model)
        return DetectionPipeline(
            cfg, sad_model=sad_model, spoof_gmm=spoof_gmm, pristine_gmm=pristine_gmm
        )
    if not args.model:
        raise InvalidConfig("backend.route is plda; pass --model PATH (embedding network)")
    if not args.backend:
        raise InvalidConfig("backend.route is plda; pass --backend PATH")
    embedder, _ = load_xresnet(args.model)
    lda, plda, _, stats = load_backend_model(args.backend)
    if "pristine" not in stats or "spoof" not in stats:
        raise DataError(
            f"{args.backend}: backend model lacks enrollment statistics; "
            "retrain it with train-backend"
        )
    return DetectionPipeline(
        cfg,
        sad_model=sad_model,
        embedder=embedder,
        lda=lda,
        plda=plda,
        pristine_stats=stats["pristine"],
        spoof_stats=stats["spoof"],
    )


def _cmd_score(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    pipe = _score_pipeline(args, cfg)
    if args.dump_series_dir:
        os.makedirs(args.dump_series_dir, exist_ok=True)

    def one(entry):
        avg, inter, series = pipe.score_utterance(read_wav(_resolve(base, entry.path)))
        if args.dump_series_dir:
            out = os.path.join(args.dump_series_dir, archive_name(entry.path, "score"))
            save_feature_archive(out, series.values[:, None], kind="score")
        return f"{entry.path}\t{float(avg)!r}\t{float(inter)!r}"

    results, failures = _for_each(manifest.entries, one, args.jobs)
    code = _report_failures(failures)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for line in results:
            if line is not None:
                fh.write(line + "\n")
    print(f"scored {len(manifest) - len(failures)} of {len(manifest)} utterances")
    return code


def _read_score_dump(path):
    scores = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            try:
                scores[parts[0]] = (float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise ParseError(line_no, f"bad score value: {exc}") from exc
    return scores


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    dump = _read_score_dump(args.scores)
    column = POOLING_CHOICES.index(args.pooling)
    target, nontarget = [], []
    for entry in manifest:
        if entry.path not in dump:
            raise MissingScores(f"no score line for {entry.path} in {args.scores}")
        value = dump[entry.path][column]
        (target if entry.label == "spoof" else nontarget).append(value)

    report = compute_eer(target, nontarget)
    report.pooling = args.pooling
    text = report.render()
    out = args.out or f"{args.scores}.{args.pooling}.report"
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(text, end="")
    return 0


# ---- parser ----


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spoofkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="pipeline config file (INI sections)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable; applied after --config)",
        )
        p.add_argument("--seed", type=int, default=0, help="top-level RNG seed")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for per-file stages")
        p.set_defaults(func=func)
        return p

    p = add("extract-features", _cmd_extract_features, "write one feature archive per utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", required=True, choices=("lfb", "mfcc"))

    p = add("train-sad", _cmd_train_sad, "train the speech activity detector on energy-gated audio")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-model", required=True)

    p = add("run-sad", _cmd_run_sad, "write speech segments per utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="SAD model file")
    p.add_argument("--out-dir", required=True)

    p = add("augment", _cmd_augment, "mix utterances with noise at a target SNR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--snr", type=float, default=None, help="target SNR in dB (default from config)")

    p = add("train-model", _cmd_train_model, "train the embedding network on extracted features")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--dev-manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--sad-model", default=None)
    p.add_argument("--out-model", required=True)

    p = add("extract-embeddings", _cmd_extract_embeddings, "write one embedding archive per utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--model", required=True, help="embedding network file")
    p.add_argument("--sad-model", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--shift", type=int, default=None, help="window shift in frames (default from config)")

    p = add("train-backend", _cmd_train_backend, "fit LDA + PLDA and enrollment statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings-dir", required=True)
    p.add_argument("--out-model", required=True)

    p = add("train-gmm", _cmd_train_gmm, "fit the spoof/pristine GMM pair on masked features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--sad-model", default=None)
    p.add_argument("--out-model", required=True)

    p = add("score", _cmd_score, "score utterances; one line with both pooled scores each")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sad-model", default=None)
    p.add_argument("--model", default=None, help="embedding network file (plda route)")
    p.add_argument("--backend", default=None, help="backend model file (plda route)")
    p.add_argument("--gmm-model", default=None, help="GMM pair file (gmm route)")
    p.add_argument("--out", required=True, help="score dump path")
    p.add_argument("--dump-series-dir", default=None, help="also write per-window score archives")

    p = add("eval", _cmd_eval, "EER report from a score dump and a labeled manifest")
    p.add_argument("--scores", required=True, help="score dump from the score command")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pooling", required=True, choices=POOLING_CHOICES)
    p.add_argument("--out", default=None, help="report path (default <scores>.<pooling>.report)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpoofkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
