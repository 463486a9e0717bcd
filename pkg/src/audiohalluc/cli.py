"""Command-line entry point.

Subcommands: ingest, split, calibrate, zeroshot, train, evaluate,
analyze, serve. Configuration precedence is flags > config file >
encoder preset > built-in defaults, and every artifact-writing command
records its resolved configuration plus input digests in a run manifest
(manifest.json) so results are reproducible from the manifest alone.
The manifest deliberately contains no timestamps: identical inputs and
seeds must produce byte-identical outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    ImportedTagger,
    render_stats,
    stats_to_json,
    token_stats,
)
from .corpus import (
    Corpus,
    CorpusError,
    Sample,
    Split,
    assign_splits,
    load_corpus,
    save_corpus,
)
from .embed_store import StoreError, align, read_store
from .evaluation import build_report, render_report, report_to_json
from .fusion import (
    FusionError,
    TrainConfig,
    load_head,
    predict_scores,
    save_head,
    train,
)
from .zeroshot import ZeroShotConfig, calibrate_alpha, classify, default_grid


@dataclass(frozen=True)
class EncoderPreset:
    """Documented defaults per encoder family; the names are labels only,
    the toolkit never loads the encoders themselves."""

    alpha: float
    hidden_size: int
    lr: float


ENCODER_PRESETS = {
    "ms-clap": EncoderPreset(alpha=0.3, hidden_size=512, lr=0.001),
    "laion-clap": EncoderPreset(alpha=0.45, hidden_size=256, lr=0.0001),
}

_TRAIN_DEFAULTS = dict(
    hidden_size=512,
    batch_size=32,
    lr=0.001,
    weight_decay=0.01,
    max_epochs=200,
    patience=20,
    seed=0,
    decision_threshold=0.5,
    normalize_inputs=False,
)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: dict[str, Path],
                   outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in inputs.items()
        },
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def resolve(flag_value, config_file: dict, key: str, preset_value, default):
    """flags > config file > preset > built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config_file:
        return config_file[key]
    if preset_value is not None:
        return preset_value
    return default


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def parse_grid(spec: str) -> np.ndarray:
    """Parse 'start:end:step' into an inclusive, evenly spaced grid."""
    try:
        start, end, step = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise ValueError(f"bad grid spec {spec!r}, expected start:end:step") from exc
    if step <= 0 or end < start:
        raise ValueError(f"bad grid spec {spec!r}: need step > 0 and end >= start")
    points = int(round((end - start) / step)) + 1
    return np.linspace(start, end, points)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _labeled_triples(corpus, audio, text, split: Split, lenient: bool):
    result = align(corpus, audio, text, split, strict=not lenient)
    triples = []
    for sample, a_vec, t_vec in result.triples:
        if sample.annotation is None:
            raise CorpusError(
                f"sample {sample.id!r} in split {split.value!r} is unannotated"
            )
        triples.append((sample, a_vec, t_vec))
    if not triples:
        raise CorpusError(f"split {split.value!r} is empty")
    return triples, result


def _write_verdicts(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    """Raw response dump (tab-separated id, audio_ref, response) -> corpus."""
    raw_path = Path(args.raw)
    if not raw_path.exists():
        raise CorpusError(f"raw dump not found: {raw_path}")
    samples = []
    seen = {}
    with raw_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(
                    f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            sample_id, audio_ref, response = (p.strip() for p in parts)
            if sample_id in seen:
                raise CorpusError(
                    f"line {lineno}: duplicate sample id {sample_id!r} "
                    f"(first seen on line {seen[sample_id]})"
                )
            seen[sample_id] = lineno
            try:
                samples.append(
                    Sample(
                        id=sample_id,
                        audio_ref=audio_ref,
                        response=response,
                        prompt=args.prompt,
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    save_corpus(Corpus(samples=samples, metadata={"prompt": args.prompt}), args.out_corpus)
    print(f"ingested {len(samples)} samples -> {args.out_corpus}")
    return 0


def cmd_split(args) -> int:
    corpus = load_corpus(args.corpus)
    updated = assign_splits(
        corpus,
        (args.train, args.val, args.test),
        seed=args.seed,
        require_annotated=args.require_annotated,
    )
    save_corpus(updated, args.out_corpus)
    print(
        f"assigned splits train={args.train} val={args.val} test={args.test} "
        f"seed={args.seed} -> {args.out_corpus}"
    )
    return 0


def _zeroshot_setup(args):
    config_file = load_config_file(args.config)
    preset = ENCODER_PRESETS.get(args.preset) if args.preset else None
    corpus = load_corpus(args.corpus)
    audio = read_store(args.audio_embs)
    text = read_store(args.text_embs)
    return config_file, preset, corpus, audio, text


def cmd_calibrate(args) -> int:
    config_file, preset, corpus, audio, text = _zeroshot_setup(args)
    grid_spec = resolve(args.grid, config_file, "grid", None, None)
    grid = parse_grid(grid_spec) if grid_spec else default_grid()
    triples, _ = _labeled_triples(corpus, audio, text, Split.VAL, args.lenient)
    val = [(s.annotation.hallucinated, a, t) for s, a, t in triples]
    alpha, f1 = calibrate_alpha(val, grid)
    out = _out_dir(args)
    result = {"alpha": alpha, "val_f1": f1, "grid_points": len(grid)}
    (out / "calibration.json").write_text(json.dumps(result, indent=2) + "\n")
    write_manifest(
        out,
        "calibrate",
        {"grid": grid_spec or "default 201 points over [0, 1]",
         "preset": args.preset, "lenient": args.lenient},
        {"corpus": Path(args.corpus), "audio_embs": Path(args.audio_embs),
         "text_embs": Path(args.text_embs)},
        ["calibration.json"],
    )
    print(f"calibrated alpha={alpha:.6g} val_f1={f1:.4f} ({len(grid)} grid points)")
    return 0


def cmd_zeroshot(args) -> int:
    config_file, preset, corpus, audio, text = _zeroshot_setup(args)
    alpha_setting = resolve(
        args.alpha, config_file, "alpha", preset.alpha if preset else None, None
    )
    if alpha_setting is None:
        raise ValueError("zeroshot needs --alpha, --preset or a config file alpha")

    if alpha_setting == "calibrate":
        grid_spec = resolve(args.grid, config_file, "grid", None, None)
        grid = parse_grid(grid_spec) if grid_spec else default_grid()
        triples, _ = _labeled_triples(corpus, audio, text, Split.VAL, args.lenient)
        val = [(s.annotation.hallucinated, a, t) for s, a, t in triples]
        alpha, val_f1 = calibrate_alpha(val, grid)
        print(f"calibrated alpha={alpha:.6g} val_f1={val_f1:.4f}")
    else:
        alpha = float(alpha_setting)

    config = ZeroShotConfig(alpha=alpha)
    triples, align_result = _labeled_triples(corpus, audio, text, Split.TEST, args.lenient)
    verdicts = [classify(a, t, config, sample_id=s.id) for s, a, t in triples]
    labels = [s.annotation.hallucinated for s, _, _ in triples]
    types = [s.annotation.halluc_type for s, _, _ in triples]
    report = build_report([v.hallucinated for v in verdicts], labels, types)

    out = _out_dir(args)
    _write_verdicts(
        out / "verdicts.jsonl",
        [
            {"sample_id": v.sample_id, "score": v.score,
             "hallucinated": v.hallucinated, "alpha": alpha}
            for v in verdicts
        ],
    )
    (out / "report.json").write_text(json.dumps(report_to_json(report), indent=2) + "\n")
    (out / "report.txt").write_text(render_report(report, title="Zero-shot evaluation"))
    write_manifest(
        out,
        "zeroshot",
        {"alpha": alpha, "alpha_setting": str(alpha_setting), "preset": args.preset,
         "lenient": args.lenient, "dropped": align_result.dropped},
        {"corpus": Path(args.corpus), "audio_embs": Path(args.audio_embs),
         "text_embs": Path(args.text_embs)},
        ["verdicts.jsonl", "report.json", "report.txt"],
    )
    print(f"zero-shot alpha={alpha:.6g}")
    print(render_report(report, title="Zero-shot evaluation"))
    return 0


def _resolved_train_config(args, config_file: dict, preset) -> TrainConfig:
    def pick(key, flag_value, preset_value=None):
        return resolve(flag_value, config_file, key, preset_value, _TRAIN_DEFAULTS[key])

    return TrainConfig(
        hidden_size=int(pick("hidden_size", args.hidden_size,
                             preset.hidden_size if preset else None)),
        batch_size=int(pick("batch_size", args.batch_size)),
        lr=float(pick("lr", args.lr, preset.lr if preset else None)),
        weight_decay=float(pick("weight_decay", args.weight_decay)),
        max_epochs=int(pick("max_epochs", args.max_epochs)),
        patience=int(pick("patience", args.patience)),
        seed=int(pick("seed", args.seed)),
        decision_threshold=float(pick("decision_threshold", args.threshold)),
        normalize_inputs=bool(pick("normalize_inputs",
                                   True if args.normalize_inputs else None)),
    )


def cmd_train(args) -> int:
    config_file, preset, corpus, audio, text = _zeroshot_setup(args)
    config = _resolved_train_config(args, config_file, preset)

    train_triples, _ = _labeled_triples(corpus, audio, text, Split.TRAIN, args.lenient)
    val_triples, _ = _labeled_triples(corpus, audio, text, Split.VAL, args.lenient)
    train_data = [(s.annotation.hallucinated, a, t) for s, a, t in train_triples]
    val_data = [(s.annotation.hallucinated, a, t) for s, a, t in val_triples]

    head, log = train(train_data, val_data, config)

    out = _out_dir(args)
    save_head(head, out / "head.fush")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(
                json.dumps(
                    {"epoch": entry.epoch, "train_loss": entry.train_loss,
                     "val_f1": entry.val_f1}
                )
                + "\n"
            )
    config_dict = {
        "hidden_size": config.hidden_size,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "weight_decay": config.weight_decay,
        "max_epochs": config.max_epochs,
        "patience": config.patience,
        "seed": config.seed,
        "decision_threshold": config.decision_threshold,
        "normalize_inputs": config.normalize_inputs,
        "preset": args.preset,
        "lenient": args.lenient,
    }
    write_manifest(
        out, "train", config_dict,
        {"corpus": Path(args.corpus), "audio_embs": Path(args.audio_embs),
         "text_embs": Path(args.text_embs)},
        ["head.fush", "train_log.jsonl"],
    )
    best = max((e.val_f1 for e in log), default=float("nan"))
    print(f"trained {len(log)} epoch(s), best val_f1={best:.4f} -> {out / 'head.fush'}")
    return 0


def cmd_evaluate(args) -> int:
    config_file, preset, corpus, audio, text = _zeroshot_setup(args)
    head = load_head(args.head)
    threshold = float(
        resolve(args.threshold, config_file, "decision_threshold", None,
                _TRAIN_DEFAULTS["decision_threshold"])
    )
    normalize = bool(
        resolve(True if args.normalize_inputs else None, config_file,
                "normalize_inputs", None, _TRAIN_DEFAULTS["normalize_inputs"])
    )

    triples, align_result = _labeled_triples(corpus, audio, text, Split.TEST, args.lenient)
    a_mat = np.stack([a for _, a, _ in triples]).astype(np.float64)
    t_mat = np.stack([t for _, _, t in triples]).astype(np.float64)
    scores = predict_scores(head, a_mat, t_mat, normalize=normalize)
    preds = scores >= threshold
    labels = [s.annotation.hallucinated for s, _, _ in triples]
    types = [s.annotation.halluc_type for s, _, _ in triples]
    report = build_report(preds.tolist(), labels, types)

    out = _out_dir(args)
    _write_verdicts(
        out / "verdicts.jsonl",
        [
            {"sample_id": s.id, "score": float(score),
             "hallucinated": bool(pred), "threshold": threshold}
            for (s, _, _), score, pred in zip(triples, scores, preds)
        ],
    )
    (out / "report.json").write_text(json.dumps(report_to_json(report), indent=2) + "\n")
    (out / "report.txt").write_text(render_report(report, title="Fusion-head evaluation"))
    write_manifest(
        out, "evaluate",
        {"decision_threshold": threshold, "normalize_inputs": normalize,
         "preset": args.preset, "lenient": args.lenient,
         "dropped": align_result.dropped},
        {"corpus": Path(args.corpus), "audio_embs": Path(args.audio_embs),
         "text_embs": Path(args.text_embs), "head": Path(args.head)},
        ["verdicts.jsonl", "report.json", "report.txt"],
    )
    print(render_report(report, title="Fusion-head evaluation"))
    return 0


def cmd_analyze(args) -> int:
    corpus = load_corpus(args.corpus)
    tagger = ImportedTagger(args.tagger_file) if args.tagger_file else None
    report = token_stats(corpus, tagger, k=args.k)
    out = _out_dir(args)
    (out / "stats.json").write_text(json.dumps(stats_to_json(report), indent=2) + "\n")
    (out / "stats.txt").write_text(render_stats(report))
    inputs = {"corpus": Path(args.corpus)}
    if args.tagger_file:
        inputs["tagger_file"] = Path(args.tagger_file)
    write_manifest(out, "analyze", {"k": args.k}, inputs, ["stats.json", "stats.txt"])
    print(render_stats(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        corpus_path=args.corpus,
        audio_root=args.audio_root,
        ui_dir=args.ui_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_store_options(sub) -> None:
    sub.add_argument("--corpus", required=True, help="corpus JSONL file")
    sub.add_argument("--audio-embs", required=True, help="audio embedding store")
    sub.add_argument("--text-embs", required=True, help="text embedding store")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--preset", choices=sorted(ENCODER_PRESETS),
                     help="encoder family defaults")
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--lenient", action="store_true",
                     help="drop split samples missing embeddings instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiohalluc",
        description="Detect audio hallucinations in generated audio descriptions.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a raw response dump into a corpus")
    p.add_argument("raw", help="tab-separated dump: id, audio_ref, response")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--prompt", default="What do you hear?")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign train/val/test splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--train", type=int, default=400)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-annotated", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("calibrate", help="grid-search alpha on the validation split")
    _add_store_options(p)
    p.add_argument("--grid", help="start:end:step, default 0:1:0.005")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("zeroshot", help="cosine-threshold classification of the test split")
    _add_store_options(p)
    p.add_argument("--alpha", help="threshold in [-1,1], or 'calibrate'")
    p.add_argument("--grid", help="start:end:step used when alpha=calibrate")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("train", help="train the fusion head")
    _add_store_options(p)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, help="decision threshold for val F1")
    p.add_argument("--normalize-inputs", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a fusion head on the test split")
    _add_store_options(p)
    p.add_argument("--head", required=True, help="fusion checkpoint")
    p.add_argument("--threshold", type=float)
    p.add_argument("--normalize-inputs", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="type frequency and token statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-k", type=int, default=5, help="tokens per ranking")
    p.add_argument("--tagger-file", help="imported token-tag JSONL file")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--audio-root", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--ui-dir", help="directory with built UI assets")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, StoreError, FusionError, AnalysisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
