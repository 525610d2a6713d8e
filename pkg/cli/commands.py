"""MoodNet command line: one function per pipeline stage."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from core import __version__, dsp
from core.calculator import ReportBuilder, blend_report, fusion_grid_search
from core.charts import plot_fusion_report, plot_history
from core.classical import cbow_pipeline, classical_pipeline
from core.data_parser import load_lexicon, load_mood_tags, load_tag_file, parse_track_list
from core.dataset import label_tracks, prepare_dataset, track_clip, track_tokens, write_label_csv
from core.errors import MoodError, UsageError
from core.layers import LYRICS_VARIANTS, ModelGraph, build_model, load_model
from core.models import Mode, PredictionSet
from core.persistence import (ConfigStore, ensure_dir, load_label_stats, read_feature_cache,
                              read_predictions_csv, save_json, save_label_stats, write_feature_cache,
                              write_fusion_csv, write_history_csv, write_predictions_csv)
from core.synthetic import write_synthetic_corpus
from core.text_embed import Word2VecTrainer, save_embedding_text, tokenize
from core.training import TrainConfig, build_training_set, predict_tracks, train

from .manifest import RunManifest, manifest_path
from .utils import (configure_logging, load_embedding, load_records, parse_splits, relative_to,
                    require_file, resolve_seed, segment_config, split_records)

logger = logging.getLogger(__name__)

DEFAULT_MODEL = {"audio": "convnet", "lyrics": "ConvNet+LSTM", "bimodal": "fusion"}


def _manifest(name: str, store: ConfigStore) -> RunManifest:
    return RunManifest(name, store.snapshot(), int(store.get('seed')))


def _finish(manifest: RunManifest, outputs: Sequence[Path], anchor: Path) -> int:
    for path in outputs:
        manifest.add_output(path)
    saved = manifest.save(manifest_path(anchor))
    logger.info("%s: wrote %s (manifest %s)", manifest.command, ", ".join(str(p) for p in outputs), saved)
    return 0


def _out_file(path: str) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    return path


# =============================================================================
# Commands
# =============================================================================

def cmd_synth(args, store: ConfigStore) -> int:
    """Write a synthetic corpus (tones, lyrics, tags, lexicon, mood tags, track list)."""
    manifest = _manifest("synth", store)
    corpus = write_synthetic_corpus(args.out, args.tracks, int(store.get('seed')), args.duration)
    outputs = [corpus.tracks, corpus.tags, corpus.lexicon, corpus.mood_tags,
               corpus.root / "audio", corpus.root / "lyrics"]
    return _finish(manifest, outputs, corpus.root)


def cmd_dataset(args, store: ConfigStore) -> int:
    """Labels from tags, artist-disjoint split and z-scored labels."""
    tracks_path = require_file(args.tracks, "--tracks")
    paths = [tracks_path, require_file(args.tags, "--tags"), require_file(args.lexicon, "--lexicon"),
             require_file(args.mood_tags, "--mood-tags")]
    manifest = _manifest("dataset", store)
    manifest.add_inputs(paths)
    out_dir = ensure_dir(args.out)

    tracks = parse_track_list(tracks_path)
    for track in tracks:
        for key in ('audio_path', 'lyrics_path'):
            value = track.get(key)
            if value and not Path(value).is_absolute():
                track[key] = relative_to(tracks_path.parent / value, out_dir)
    records = label_tracks(tracks, load_tag_file(args.tags), load_lexicon(args.lexicon),
                           load_mood_tags(args.mood_tags))
    fractions = [float(f) for f in store.get('split_fractions')]
    records, stats = prepare_dataset(records, fractions, int(store.get('seed')),
                                     store.get('normalization_source'))

    labels_path, stats_path = out_dir / "labels.csv", out_dir / "label_stats.json"
    write_label_csv(records, labels_path)
    save_label_stats(stats, stats_path)
    return _finish(manifest, [labels_path, stats_path], out_dir)


def cmd_features(args, store: ConfigStore) -> int:
    """Whole-track classical audio features (and optionally mel spectrograms) into a feature cache."""
    if args.audio_dir is None and args.labels is None:
        raise UsageError("features needs --audio-dir or --labels")
    manifest = _manifest("features", store)
    if args.audio_dir is not None:
        audio_dir = Path(args.audio_dir)
        if not audio_dir.is_dir():
            raise FileNotFoundError(f"--audio-dir: not a directory: {audio_dir}")
        items = [(p.stem, p) for p in sorted(audio_dir.glob("*.wav"))]
        manifest.add_inputs([audio_dir])
        load = dsp.load_clip
    else:
        records, base_dir = load_records(args.labels)
        items = [(r.msd_id, r) for r in records if r.audio_path]
        manifest.add_inputs([args.labels] + [base_dir / r.audio_path for _, r in items])

        def load(record):
            return track_clip(record, base_dir)

    def extract(item) -> list[tuple[str, str, np.ndarray]]:
        track_id, source = item
        clip = load(source)
        out = [(track_id, "classical", dsp.classical_audio_features(clip))]
        if args.mel:
            out.append((track_id, "mel", dsp.mel_spectrogram(clip).values))
        return out

    per_track = dsp.extract_features_parallel(items, extract, int(store.get('threads')))
    out = _out_file(args.out)
    count = write_feature_cache(out, [rec for recs in per_track for rec in recs])
    logger.info("Extracted features for %d track(s), %d record(s)", len(items), count)
    return _finish(manifest, [out], out)


def _lyric_documents(source: Path) -> list[list[str]]:
    if source.is_dir():
        return [tokenize(p.read_text(encoding='utf-8')) for p in sorted(source.glob("*.txt"))]
    if source.suffix.lower() == ".csv":
        records, base_dir = load_records(source)
        train_records = split_records(records)["train"]
        return [t for t in (track_tokens(r, base_dir) for r in train_records) if t]
    return [tokenize(line) for line in source.read_text(encoding='utf-8').splitlines() if line.strip()]


def cmd_embed(args, store: ConfigStore) -> int:
    """Train word2vec on a lyrics corpus (directory of .txt, label CSV train split, or one lyric per line)."""
    source = require_file(args.lyrics, "--lyrics")
    store.override({'embedding_dim': args.dims, 'w2v_epochs': args.epochs, 'w2v_variant': args.variant})
    manifest = _manifest("embed", store)
    manifest.add_inputs([source])
    trainer = Word2VecTrainer(dims=int(store.get('embedding_dim')), window=int(store.get('w2v_window')),
                              negatives=int(store.get('w2v_negatives')), epochs=int(store.get('w2v_epochs')),
                              seed=int(store.get('seed')), variant=store.get('w2v_variant'))
    vocab, emb = trainer.train(_lyric_documents(source))

    out_dir = ensure_dir(args.out)
    emb_path, vocab_path, loss_path = out_dir / "embedding.txt", out_dir / "vocab.tsv", out_dir / "w2v_loss.csv"
    save_embedding_text(vocab, emb, emb_path)
    vocab.save(vocab_path)
    with open(loss_path, 'w', encoding='utf-8') as f:
        f.write("epoch,loss\n")
        f.writelines(f"{k},{loss!r}\n" for k, loss in enumerate(trainer.losses, 1))
    return _finish(manifest, [emb_path, vocab_path, loss_path], out_dir)


def _check_kind(mode: str, kind: str) -> None:
    allowed = {"audio": ("convnet",), "lyrics": LYRICS_VARIANTS, "bimodal": ("fusion",)}[mode]
    if kind not in allowed:
        raise UsageError(f"--model {kind} does not fit --mode {mode} (expected one of {', '.join(allowed)})")


def cmd_train(args, store: ConfigStore) -> int:
    """Train a deep model on augmented segments with early stopping."""
    store.override({'epochs': args.epochs, 'batch_size': args.batch_size,
                    'learning_rate': args.learning_rate, 'patience': args.patience})
    mode = args.mode
    kind = args.model or DEFAULT_MODEL[mode]
    _check_kind(mode, kind)
    records, base_dir = load_records(args.labels)
    vocab, emb = load_embedding(args.embedding)
    seg = segment_config(store)
    if emb is not None and emb.dims != int(store.get('embedding_dim')):
        logger.info("Using embedding dimension %d from %s", emb.dims, args.embedding)
        store.set('embedding_dim', emb.dims, 'embedding')
    cfg = TrainConfig.from_settings(store.settings, mode, kind)
    manifest = _manifest("train", store)
    manifest.add_inputs([args.labels, args.embedding])

    model = build_model(kind, n_mels=seg.n_mels, n_frames=seg.n_frames,
                        embedding_dim=int(store.get('embedding_dim')), seq_len=seg.words_per_segment,
                        activation=store.get('activation'), drop_prob=float(store.get('dropout')),
                        lyrics_variant=store.get('lyrics_fusion_branch'), seed=cfg.seed)
    split = split_records(records)
    threads = int(store.get('threads'))
    segments = build_training_set(split["train"], mode, cfg.seed, vocab, emb, seg, base_dir, threads)
    valid = build_training_set(split["valid"], mode, cfg.seed, vocab, emb, seg, base_dir, threads, augment=False)
    logger.info("Training %s on %d segments (%d validation)", kind, len(segments), len(valid))
    result = train(model, segments, valid, cfg)

    out_dir = ensure_dir(args.out)
    paths = [out_dir / "model.bin", out_dir / "history.csv", out_dir / "history.png", out_dir / "train_config.json"]
    result.model.save(paths[0])
    write_history_csv(result.history, paths[1])
    plot_history(result.history, paths[2], title=f"{kind} ({mode})", best_epoch=result.best_epoch)
    save_json({**cfg.to_dict(), 'best_epoch': result.best_epoch, 'best_valid_loss': result.best_valid_loss},
              paths[3])
    return _finish(manifest, paths, out_dir)


def _model_mode(model: ModelGraph) -> Mode:
    modalities = set(model.modalities)
    if modalities == {"audio", "lyrics"}:
        return Mode.BIMODAL
    return Mode(modalities.pop())


def cmd_eval(args, store: ConfigStore) -> int:
    """Track-level predictions of a trained model, averaged over evenly spaced segments."""
    model_path = require_file(args.model, "--model")
    splits = parse_splits(args.split)
    model = load_model(model_path)
    mode = _model_mode(model)
    records, base_dir = load_records(args.labels)
    vocab, emb = load_embedding(args.embedding)

    seg = segment_config(store)
    if "audio" in model.input_shapes:
        seg.n_mels, frames = model.input_shapes["audio"]
        seg.segment_seconds = frames * dsp.FRAME_SIZE / dsp.TARGET_RATE
    if "lyrics" in model.input_shapes:
        seg.words_per_segment = model.input_shapes["lyrics"][1]
    manifest = _manifest("eval", store)
    manifest.add_inputs([model_path, args.labels, args.embedding])

    by_split = split_records(records)
    rows = []
    for name in splits:
        preds = predict_tracks(model, by_split[name], mode, name, vocab, emb, seg, base_dir,
                               int(store.get('threads')), name=model.kind)
        rows.extend(preds.rows)
    out = _out_file(args.out)
    write_predictions_csv(PredictionSet(rows, model.kind), out)
    return _finish(manifest, [out], out)


def cmd_classical(args, store: ConfigStore) -> int:
    """Classical baselines: SVR on audio or text features, or the CBOW random forest."""
    records, base_dir = load_records(args.labels)
    split = split_records(records)
    manifest = _manifest("classical", store)
    manifest.add_inputs([args.labels, args.lexicon, args.features, args.embedding])
    out = _out_file(args.out)
    outputs = [out]

    if args.mode == "cbow":
        vocab, emb = load_embedding(args.embedding)
        if vocab is None:
            raise UsageError("classical --mode cbow needs --embedding")
        max_depth = int(store.get('forest_max_depth')) or None
        predictions = cbow_pipeline(split["train"], split["valid"], split["test"], vocab, emb,
                                    int(store.get('forest_trees')), int(store.get('forest_min_leaf')),
                                    max_depth, int(store.get('seed')), base_dir)
    else:
        lexicon = load_lexicon(args.lexicon) if args.lexicon else None
        features = None
        if args.features:
            features = {tid: vec for tid, kind, vec in read_feature_cache(args.features) if kind == "classical"}
        result = classical_pipeline(args.mode, split["train"], split["valid"], split["test"], lexicon,
                                    C_grid=store.get('svr_C_grid'), epsilon=float(store.get('svr_epsilon')),
                                    tol=float(store.get('svr_tol')), kernels=(store.get('svr_kernel'),),
                                    top_k=int(store.get('text_top_k')), base_dir=base_dir,
                                    threads=int(store.get('threads')), features=features)
        predictions = result.predictions
        params_path = out.with_name(f"{out.stem}.params.json")
        save_json(result.chosen, params_path)
        outputs.append(params_path)
    write_predictions_csv(predictions, out)
    return _finish(manifest, outputs, out)


def cmd_fuse(args, store: ConfigStore) -> int:
    """Late-fusion weight sweep of two prediction files."""
    a_path, b_path = require_file(args.a, "--a"), require_file(args.b, "--b")
    if args.selection:
        store.set('fusion_selection', args.selection)
    manifest = _manifest("fuse", store)
    manifest.add_inputs([a_path, b_path, args.truth])
    truth = None
    if args.truth:
        records, _ = load_records(args.truth)
        truth = {r.msd_id: r.label for r in records}

    a, b = read_predictions_csv(a_path), read_predictions_csv(b_path)
    report = fusion_grid_search(a, b, truth, selection=store.get('fusion_selection'))
    out = _out_file(args.out)
    chart = out.with_suffix(".png")
    write_fusion_csv(report, out)
    plot_fusion_report(report, chart, title=f"{a.name} + {b.name}", weight_label=f"weight of {a.name}")
    print(f"best weight: valence {report.best_valence_weight:.1f}, arousal {report.best_arousal_weight:.1f}")
    return _finish(manifest, [out, chart], out)


def _parse_input(spec: str) -> tuple[str, str, Path]:
    """``MODE:MODEL=PATH`` or a PATH named ``<mode>_<model>.csv``."""
    label, sep, path = spec.partition('=')
    if sep:
        mode, colon, model = label.partition(':')
        if not colon or not mode or not model:
            raise UsageError(f"--inputs entry {spec!r} must look like MODE:MODEL=PATH")
        return mode, model, Path(path)
    path = Path(spec)
    mode, underscore, model = path.stem.partition('_')
    if not underscore:
        raise UsageError(f"Cannot tell mode and model from {path.name}; use MODE:MODEL=PATH")
    return mode, model, path


def cmd_report(args, store: ConfigStore) -> int:
    """R² table over prediction files, with optional classical/deep blends."""
    if not args.inputs:
        raise UsageError("report needs at least one --inputs entry")
    entries = [_parse_input(spec) for spec in args.inputs]
    manifest = _manifest("report", store)
    manifest.add_inputs([p for _, _, p in entries] + [args.stats])
    stats = load_label_stats(require_file(args.stats, "--stats")) if args.stats else None

    builder = ReportBuilder(stats, args.split)
    for mode, model, path in entries:
        builder.add(mode, model, read_predictions_csv(require_file(path, "--inputs")))
    pairs = {}
    for spec in args.blend or ():
        modality, sep, files = spec.partition('=')
        classical, comma, deep = files.partition(',')
        if not sep or not comma:
            raise UsageError(f"--blend entry {spec!r} must look like MODALITY=CLASSICAL.csv,DEEP.csv")
        manifest.add_inputs([classical, deep])
        pairs[modality] = (read_predictions_csv(require_file(classical, "--blend")),
                           read_predictions_csv(require_file(deep, "--blend")))
    if pairs:
        builder.add_blends(blend_report(pairs, args.dimension, store.get('fusion_selection')))

    paths = builder.emit(args.out)
    print(paths.text.read_text(encoding='utf-8'), end='')
    return _finish(manifest, list(paths), Path(args.out))


# =============================================================================
# Parser
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moodnet", description="Multimodal music mood regression toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--threads", type=int, help="worker cap for per-track work")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="global seed (falls back to MOODNET_SEED)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic tone-and-lyrics corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", type=int, default=120)
    p.add_argument("--duration", type=float, default=3.0, help="seconds per track")

    p = add("dataset", cmd_dataset, "build the label CSV from tags, split and normalize")
    p.add_argument("--tracks", required=True, help="track list CSV (msd_id,artist,title,audio_path,lyrics_path)")
    p.add_argument("--tags", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--mood-tags", required=True)
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "extract classical audio features into a feature cache")
    p.add_argument("--audio-dir")
    p.add_argument("--labels")
    p.add_argument("--mel", action="store_true", help="also store full-track mel spectrograms")
    p.add_argument("--out", required=True)

    p = add("embed", cmd_embed, "train word2vec embeddings on lyrics")
    p.add_argument("--lyrics", required=True)
    p.add_argument("--dims", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=["skipgram", "cbow"])
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a deep model")
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p.add_argument("--model", help=f"convnet, fusion or one of {', '.join(LYRICS_VARIANTS)}")
    p.add_argument("--embedding")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "predict tracks with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--embedding")
    p.add_argument("--split", default="test", help="comma-separated splits")
    p.add_argument("--out", required=True)

    p = add("classical", cmd_classical, "fit a classical baseline")
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", required=True, choices=["audio", "lyrics", "cbow"])
    p.add_argument("--lexicon")
    p.add_argument("--features")
    p.add_argument("--embedding")
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "late-fusion weight sweep of two prediction files")
    p.add_argument("--a", required=True, help="predictions weighted by w")
    p.add_argument("--b", required=True, help="predictions weighted by 1 - w")
    p.add_argument("--truth", help="label CSV overriding the true labels")
    p.add_argument("--selection", choices=["validation", "test"])
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "R² report over prediction files")
    p.add_argument("--inputs", nargs="+", help="MODE:MODEL=PATH or <mode>_<model>.csv")
    p.add_argument("--blend", action="append", help="MODALITY=CLASSICAL.csv,DEEP.csv")
    p.add_argument("--dimension", default="valence", choices=["valence", "arousal"])
    p.add_argument("--stats", help="label_stats.json for the denormalization footnote")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        store = ConfigStore(args.config) if args.config else ConfigStore()
        store.override({'threads': args.threads})
        resolve_seed(args.seed, store)
        return args.func(args, store)
    except UsageError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 2
    except MoodError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error:io: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error:invalid-value: {e}", file=sys.stderr)
        return 1
