"""``trpfuse`` command line: prepare, train, evaluate, sweep, report.

Recording directories hold, per recording ``<name>``:

    <name>.meta         total_frames=<n> (key=value)
    <name>.events.csv   event_frame
    <name>.vap.csv      frame,prob
    <name>.llm.csv      frame,prob
    <name>.spans.csv    start_s,end_s,speaker,text (optional; prompt ensemble)

Exit codes: 0 success, 1 user/data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import ingest
from .ensemble_lr import LRConfig, load_logistic, save_logistic
from .ensembles import KINDS, LogisticPredictor, LstmPredictor, PromptPredictor, make_predictor
from .errors import TrainingError, TrpfuseError, ValidationError
from .evaluation import (
    Recording,
    binarize,
    evaluate_run,
    kfold_split,
    loo_split,
    measure_rtf,
    metrics,
    report_row,
    sweep_many,
    windowed_confusion,
    write_report,
    write_trace,
)
from .lstm import TrainConfig, load_model, save_model, write_history
from .prompt import NdjsonClient, PromptConfig, ReplayClient, load_template
from .synthetic import SyntheticConfig, make_dataset
from .timeline import EvalConfig, shift_events

log = logging.getLogger("trpfuse")

DEFAULT_OFFSETS = {"ccpe": 0, "icc": -90, "synthetic": 0}
# fixed offsets from --seed per subsystem
SPLIT_SEED_OFFSET = 0
TRAIN_SEED_OFFSET = 1000
DATA_SEED_OFFSET = 2000


# ---------------------------------------------------------------------------
# recording directories
# ---------------------------------------------------------------------------


def load_recordings(data_dir, require_streams: bool = True) -> List[Recording]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ValidationError(f"data directory {data_dir} does not exist")
    recordings = []
    for meta_path in sorted(data_dir.glob("*.meta")):
        name = meta_path.name[: -len(".meta")]
        truth = ingest.load_ground_truth(data_dir / f"{name}.events.csv", meta_path)
        stream_paths = [data_dir / f"{name}.{s}.csv" for s in ("vap", "llm")]
        missing = [p.name for p in stream_paths if not p.exists()]
        if missing:
            if require_streams:
                raise ValidationError(f"{name}: missing stream files {', '.join(missing)}")
            continue
        vap, llm = (ingest.load_prediction_stream(p) for p in stream_paths)
        spans_path = data_dir / f"{name}.spans.csv"
        spans = ingest.load_spans(spans_path) if spans_path.exists() else None
        recordings.append(Recording(name, vap, llm, truth, spans))
    if not recordings:
        raise ValidationError(f"no recordings found in {data_dir}")
    return recordings


def store_recording(rec: Recording, out_dir: Path) -> None:
    ingest.store_ground_truth(rec.truth, out_dir / f"{rec.name}.events.csv", out_dir / f"{rec.name}.meta")
    ingest.store_prediction_stream(rec.vap, out_dir / f"{rec.name}.vap.csv")
    ingest.store_prediction_stream(rec.llm, out_dir / f"{rec.name}.llm.csv")
    if rec.spans is not None:
        ingest.store_spans(rec.spans, out_dir / f"{rec.name}.spans.csv")


# ---------------------------------------------------------------------------
# config objects from args
# ---------------------------------------------------------------------------


def eval_config(args) -> EvalConfig:
    return EvalConfig(window_frames=args.window_frames, allow_flip=not args.no_flip)


def lr_config(args) -> LRConfig:
    return LRConfig(learning_rate=args.lr_learning_rate, epochs=args.lr_epochs, l2=args.l2, seed=args.seed)


def lstm_config(args) -> TrainConfig:
    return TrainConfig(
        gamma=args.gamma,
        alpha=args.alpha,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        seq_len=args.seq_len,
        epochs=args.epochs,
        seed=args.seed,
        hidden=args.hidden,
        heads=args.heads,
        dropout=args.dropout,
        window_frames=args.window_frames,
        val_fraction=args.val_fraction,
    )


def client_factory(args):
    if args.llm_replay:
        return lambda: ReplayClient(args.llm_replay)
    if args.llm_cmd:
        return lambda: NdjsonClient.spawn(args.llm_cmd.split(), timeout=args.llm_timeout)
    if args.llm_port:
        return lambda: NdjsonClient.connect(args.llm_host, args.llm_port, timeout=args.llm_timeout)
    raise ValidationError("the prompt ensemble needs --llm-replay, --llm-cmd or --llm-port")


def prompt_config(args) -> PromptConfig:
    return PromptConfig(max_context_s=args.max_context_s, system_text=load_template(args.prompt_template))


def trained_predictor(args):
    """Predictor for evaluate/sweep: loads a model where the ensemble has one."""
    if args.ensemble in ("lr", "lstm"):
        if not args.model:
            raise ValidationError(f"--model is required for the {args.ensemble} ensemble")
        if not Path(args.model).exists():
            raise ValidationError(f"model file {args.model} does not exist")
        if args.ensemble == "lr":
            return LogisticPredictor(model=load_logistic(args.model))
        return LstmPredictor(model=load_model(args.model))
    if args.ensemble == "prompt":
        return PromptPredictor(client_factory(args), prompt_config(args))
    return make_predictor(args.ensemble)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    offset = DEFAULT_OFFSETS[args.kind] if args.offset_frames is None else args.offset_frames
    if args.kind != "synthetic" and not args.input:
        raise ValidationError(f"--input is required for --kind {args.kind}")

    if args.kind == "ccpe":
        dialogs = ingest.parse_ccpe(Path(args.input).read_bytes())
        cfg = ingest.TimelineConfig(gap_s=args.gap_s, words_per_s=args.words_per_s)
        n_events = 0
        for dialog in dialogs:
            truth, spans = ingest.build_ccpe_timeline(dialog, cfg)
            truth = shift_events(truth, offset) if offset else truth
            ingest.store_ground_truth(truth, out / f"{dialog.id}.events.csv", out / f"{dialog.id}.meta")
            ingest.store_spans(spans, out / f"{dialog.id}.spans.csv")
            n_events += truth.events.size
        print(f"dialogs={len(dialogs)} events={n_events}")
    elif args.kind == "icc":
        if args.total_frames is None or args.name is None:
            raise ValidationError("icc preparation needs --total-frames and --name")
        resp = ingest.load_icc_responses(args.input, args.participants)
        truth = ingest.aggregate_icc_labels(resp, args.total_frames, args.agreement, args.smear_frames)
        truth = shift_events(truth, offset)
        ingest.store_ground_truth(truth, out / f"{args.name}.events.csv", out / f"{args.name}.meta")
        print(f"participants={resp.n_participants} events={truth.events.size}")
    else:
        recordings = make_dataset(args.count, args.seed + DATA_SEED_OFFSET, SyntheticConfig(n_frames=args.frames))
        for rec in recordings:
            store_recording(rec, out)
        print(f"recordings={len(recordings)} events={sum(r.truth.events.size for r in recordings)}")
    return 0


def cmd_train(args) -> int:
    recordings = load_recordings(args.data)
    cfg = eval_config(args)
    seed = args.seed + TRAIN_SEED_OFFSET
    for path in (args.model, args.history):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    if args.ensemble == "lr":
        predictor = LogisticPredictor(lr_config(args)).fit(recordings, cfg, seed=seed)
        save_logistic(predictor.model, args.model)
        if args.history:
            with open(args.history, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["epoch", "train_loss"])
                for epoch, loss in enumerate(predictor.model.history):
                    writer.writerow([epoch, f"{loss:.10f}"])
    elif args.ensemble == "lstm":
        predictor = LstmPredictor(lstm_config(args)).fit(recordings, cfg, seed=seed)
        save_model(predictor.model, args.model)
        if args.history:
            write_history(predictor.history, args.history)
    else:
        raise ValidationError(f"ensemble {args.ensemble!r} has nothing to train; use lr or lstm")
    print(f"model written to {args.model}")
    return 0


def _write_rtf(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scope", "rtf"])
        writer.writerows(rows)


def cmd_evaluate(args) -> int:
    recordings = load_recordings(args.data)
    cfg = eval_config(args)
    predictor = trained_predictor(args)
    probs = {r.name: predictor.predict(r) for r in recordings}
    if args.threshold is not None:
        threshold, flipped = args.threshold, args.flipped
    else:
        sweep = sweep_many([(probs[r.name], r.truth) for r in recordings], cfg, args.objective)
        threshold, flipped = sweep.best_threshold, sweep.flipped

    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    conf = None
    for rec in recordings:
        c = windowed_confusion(binarize(probs[rec.name], threshold, flipped), rec.truth, cfg.window_frames)
        conf = c if conf is None else conf + c
        write_trace(probs[rec.name], rec.truth, threshold, flipped, cfg.window_frames, out / "traces" / f"{rec.name}.csv")
    measured = measure_rtf(predictor, recordings)
    report = metrics(conf, measured)
    prompt = args.prompt_template if args.ensemble == "prompt" else ""
    write_report([report_row(args.dataset, args.ensemble, prompt, threshold, flipped, report, args.rtf_in_report)], out / "report.csv")
    _write_rtf(out / "timing.csv", [["all", f"{measured:.6f}"]])
    print(f"balanced_acc={report.balanced_accuracy:.4f} threshold={threshold} flipped={flipped}")
    return 0


def cmd_sweep(args) -> int:
    recordings = load_recordings(args.data)
    cfg = eval_config(args)
    predictor = trained_predictor(args)
    pairs = [(predictor.predict(r), r.truth) for r in recordings]
    result = sweep_many(pairs, cfg, args.objective)
    rows = []
    for threshold, flipped, _ in result.grid:
        conf = None
        for probs, truth in pairs:
            c = windowed_confusion(binarize(probs, threshold, flipped), truth, cfg.window_frames)
            conf = c if conf is None else conf + c
        rows.append(report_row(args.dataset, args.ensemble, "", threshold, flipped, metrics(conf), False))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, args.out)
    print(f"best threshold={result.best_threshold} flipped={result.flipped} balanced_acc={result.report.balanced_accuracy:.4f}")
    return 0


def cmd_report(args) -> int:
    recordings = load_recordings(args.data)
    cfg = eval_config(args)
    if args.cv == "kfold":
        folds = kfold_split(len(recordings), args.folds, args.seed + SPLIT_SEED_OFFSET)
    elif args.cv == "loo":
        folds = loo_split(len(recordings))
    else:
        folds = None

    if args.ensemble == "lr":
        factory = lambda: LogisticPredictor(lr_config(args))
    elif args.ensemble == "lstm":
        factory = lambda: LstmPredictor(lstm_config(args))
    elif args.ensemble == "prompt":
        factory = lambda: PromptPredictor(client_factory(args), prompt_config(args))
    else:
        factory = lambda: make_predictor(args.ensemble)

    result = evaluate_run(
        factory, recordings, cfg, folds, seed=args.seed + TRAIN_SEED_OFFSET,
        objective=args.objective, jobs=args.jobs,
    )
    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    prompt = args.prompt_template if args.ensemble == "prompt" else ""
    rows, timing = [], []
    by_name = {r.name: r for r in recordings}
    for fold in result.folds:
        label = f"{args.dataset}/fold{fold.fold}"
        if fold.skipped:
            rows.append(report_row(label, args.ensemble, prompt, None, None, None))
            continue
        rows.append(report_row(label, args.ensemble, prompt, fold.sweep.best_threshold, fold.sweep.flipped, fold.report, args.rtf_in_report))
        timing.append([f"fold{fold.fold}", f"{fold.rtf:.6f}"])
        for name, probs in fold.predictions.items():
            write_trace(probs, by_name[name].truth, fold.sweep.best_threshold, fold.sweep.flipped, cfg.window_frames, out / "traces" / f"{name}.csv")
    if result.aggregate is not None:
        rows.append(report_row(f"{args.dataset}/aggregate", args.ensemble, prompt, None, None, result.aggregate, args.rtf_in_report))
        timing.append(["aggregate", f"{result.rtf:.6f}"])
    write_report(rows, out / "report.csv")
    _write_rtf(out / "timing.csv", timing)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if result.aggregate is None:
        raise TrainingError("every fold was skipped; no aggregate metrics")
    print(f"folds={len(result.folds)} aggregate balanced_acc={result.aggregate.balanced_accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_eval_flags(p):
    p.add_argument("--window-frames", type=int, default=75, help="evaluation window half-width in frames")
    p.add_argument("--no-flip", action="store_true", help="do not try inverted predictions in sweeps")
    p.add_argument("--objective", choices=("balanced_accuracy", "f1"), default="balanced_accuracy", help="sweep objective")
    p.add_argument("--dataset", default="dataset", help="dataset label written to reports")


def _add_model_flags(p):
    p.add_argument("--ensemble", choices=KINDS, required=True, help="ensemble kind")
    p.add_argument("--data", required=True, help="recording directory")


def _add_train_flags(p):
    g = p.add_argument_group("logistic regression")
    g.add_argument("--lr-learning-rate", type=float, default=0.1, help="gradient-descent step")
    g.add_argument("--lr-epochs", type=int, default=500, help="full-batch epochs")
    g.add_argument("--l2", type=float, default=1e-4, help="L2 penalty")
    g = p.add_argument_group("lstm")
    g.add_argument("--epochs", type=int, default=20, help="training epochs")
    g.add_argument("--learning-rate", type=float, default=1e-3, help="AdamW learning rate")
    g.add_argument("--weight-decay", type=float, default=0.01, help="AdamW decoupled weight decay")
    g.add_argument("--batch-size", type=int, default=32, help="sequences per batch")
    g.add_argument("--seq-len", type=int, default=100, help="frames per training sequence")
    g.add_argument("--hidden", type=int, default=128, help="LSTM hidden size per direction")
    g.add_argument("--heads", type=int, default=4, help="attention heads")
    g.add_argument("--dropout", type=float, default=0.3, help="dropout after attention")
    g.add_argument("--gamma", type=float, default=3.0, help="focal loss gamma")
    g.add_argument("--alpha", type=float, default=0.75, help="focal loss alpha")
    g.add_argument("--val-fraction", type=float, default=0.2, help="share of chunks held out for history")


def _add_llm_flags(p):
    g = p.add_argument_group("prompt ensemble")
    g.add_argument("--prompt-template", choices=("prompt1", "prompt2", "prompt3"), default="prompt2", help="system message")
    g.add_argument("--max-context-s", type=float, default=10.0, help="seconds of transcript in each prompt")
    g.add_argument("--llm-cmd", default=None, help="spawn this command and talk NDJSON over its stdio")
    g.add_argument("--llm-host", default="127.0.0.1", help="NDJSON server host")
    g.add_argument("--llm-port", type=int, default=None, help="NDJSON server port")
    g.add_argument("--llm-replay", default=None, help="CSV id,text replay file instead of a live LLM")
    g.add_argument("--llm-timeout", type=float, default=30.0, help="seconds per exchange")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="trpfuse", description="Turn-taking prediction fusion and evaluation.", formatter_class=fmt)
    parser.add_argument("--config", default=None, help="key=value file supplying defaults (flags win)")
    parser.add_argument("--seed", type=int, default=0, help="master seed; subsystems use fixed offsets")
    parser.add_argument("--log-file", default=None, help="also write timestamped logs here")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build ground truth (and synthetic streams)", formatter_class=fmt)
    p.add_argument("--kind", choices=("ccpe", "icc", "synthetic"), required=True, help="input kind")
    p.add_argument("--input", default=None, help="CCPE data.json or ICC responses CSV")
    p.add_argument("--out", required=True, help="output recording directory")
    p.add_argument("--gap-s", type=float, default=2.0, help="silence inserted after each CCPE turn")
    p.add_argument("--words-per-s", type=float, default=2.5, help="speaking rate for synthetic CCPE timing")
    p.add_argument("--offset-frames", type=int, default=None, help="event shift; None means 0 for ccpe, -90 for icc")
    p.add_argument("--total-frames", type=int, default=None, help="ICC recording length in frames")
    p.add_argument("--name", default=None, help="ICC recording name")
    p.add_argument("--participants", type=int, default=None, help="ICC participant count; None counts distinct ids")
    p.add_argument("--agreement", type=float, default=0.30, help="ICC participant agreement fraction")
    p.add_argument("--smear-frames", type=int, default=37, help="ICC response smear half-width")
    p.add_argument("--count", type=int, default=10, help="synthetic recording count")
    p.add_argument("--frames", type=int, default=3000, help="frames per synthetic recording")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train an lr or lstm ensemble", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--history", default=None, help="training-history CSV path")
    _add_eval_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, text in (
        ("evaluate", cmd_evaluate, "score an ensemble on a recording directory"),
        ("sweep", cmd_sweep, "score every (threshold, flip) grid point"),
    ):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        _add_model_flags(p)
        p.add_argument("--model", default=None, help="trained model (lr/lstm)")
        p.add_argument("--out", required=True, help="output directory" if name == "evaluate" else "output CSV")
        _add_eval_flags(p)
        if name == "evaluate":
            p.add_argument("--threshold", type=float, default=None, help="fixed threshold; None sweeps on the data")
            p.add_argument("--flipped", action="store_true", help="invert probabilities with --threshold")
            p.add_argument("--rtf-in-report", action="store_true", help="write measured RTF into report.csv")
        _add_llm_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="cross-validated run with per-fold and aggregate rows", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cv", choices=("kfold", "loo", "none"), default="kfold", help="cross-validation scheme")
    p.add_argument("--folds", type=int, default=5, help="k for kfold")
    p.add_argument("--jobs", type=int, default=1, help="folds evaluated in parallel")
    p.add_argument("--rtf-in-report", action="store_true", help="write measured RTF into report.csv")
    _add_eval_flags(p)
    _add_train_flags(p)
    _add_llm_flags(p)
    p.set_defaults(func=cmd_report)
    parser.commands = dict(sub.choices)
    return parser


def read_config_file(path) -> dict:
    if not Path(path).exists():
        raise ValidationError(f"config file {path} does not exist")
    return {key.replace("-", "_"): value for key, value in ingest.read_meta(path).items()}


def apply_config(parser: argparse.ArgumentParser, values: dict, source: str) -> None:
    """Install config values as parser defaults so explicit flags still win.

    A key may belong to any subcommand; each one that knows it picks it up.
    """
    targets = [parser] + list(parser.commands.values())
    for key, raw in values.items():
        hits = 0
        for p in targets:
            for action in p._actions:
                if action.dest != key or not action.option_strings:
                    continue
                if action.nargs == 0:
                    value = raw.lower() in ("1", "true", "yes")
                else:
                    value = action.type(raw) if action.type else raw
                    if action.choices is not None and value not in action.choices:
                        raise ValidationError(f"{source}: {key}={raw} not one of {sorted(action.choices)}")
                action.default = value
                action.required = False
                hits += 1
        if not hits:
            raise ValidationError(f"{source}: unknown key {key!r}")


def parse_args(argv=None):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        apply_config(parser, read_config_file(known.config), known.config)
    return parser.parse_args(argv)


def setup_logging(log_file: Optional[str]) -> None:
    level = getattr(logging, os.environ.get("TRPFUSE_LOG", "WARNING").upper(), logging.WARNING)
    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(level)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    if log_file:
        fh = logging.FileHandler(log_file)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except TrpfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    setup_logging(args.log_file)
    try:
        return args.func(args)
    except (TrpfuseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
