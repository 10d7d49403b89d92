"""Command-line entry point: ``translog <subcommand> ... --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, PipelineConfig
from .drain import CorpusError, mine_corpus, read_assignments, read_templates, write_assignments, write_templates
from .embedder import EmbeddingError, hashed_table, load_embeddings, materialize_all, save_embeddings
from .evaluator import evaluate
from .experiments import ARMS, run_lowresource, run_transfer
from .logformat import LineFormat, LineFormatError, is_alert, read_lines
from .model import ConfigError as ModelConfigError
from .sessionizer import (SessionError, chrono_split, group_sessions, label_counts, labeled_lines,
                          read_sessions, window_sessions, write_sessions)
from .synth import SynthConfigError, generate, paired_domains, write_corpus
from .trainer import (IncompatibleBackbone, TrainConfig, TrainingDivergence, adapter_tune,
                      fine_tune, pretrain, split_dev, subsample, train_from_scratch)

log = logging.getLogger("translog")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

EPILOG = """\
exit codes:
  0  success
  2  configuration error (bad flag value, unknown config key, invalid JSON config)
  3  data error (missing or malformed input file, empty corpus, incompatible checkpoint)
  4  training diverged (non-finite loss)

Errors are written to stderr as one JSON line: {"error": <kind>, "message": <text>}.
Every output directory receives config.resolved.json with the tool version.
"""


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _data_error(message: str) -> CliError:
    return CliError(EXIT_DATA, "data", message)


# ---------------------------------------------------------------------------
# helpers


def _config(args, section: str | None = None, **values) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if section is not None:
        cfg = cfg.override(section, **values)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(cfg: PipelineConfig, out: Path, argv: Sequence[str], payload: dict) -> None:
    cfg.write_resolved(out, " ".join(argv))
    print(json.dumps(payload, sort_keys=True))


def _session_file(path: str, name: str) -> Path:
    p = Path(path)
    return p / f"{name}.jsonl" if p.is_dir() else p


def _sessions(path: Path):
    if not path.exists():
        raise _data_error(f"missing sessions file {path}")
    return read_sessions(path)


def _arrays(path: Path, table, l: int):  # noqa: E741
    sessions = _sessions(path)
    if not sessions:
        raise _data_error(f"{path} holds no sessions")
    return materialize_all(sessions, table, l)


def _check_dim(table, d: int) -> None:
    if table.dim != d:
        raise CliError(EXIT_CONFIG, "config",
                       f"embedding dim {table.dim} does not match model d={d}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args, argv) -> None:
    cfg = _config(args, "parser", preset=args.preset)
    fmt = LineFormat.parse(args.format or cfg.sessionizer.line_format)
    out = _out(args)
    contents = []
    for n, line in enumerate(read_lines(args.input), start=1):
        try:
            contents.append(fmt.split(line)["Content"] if line.strip() else "")
        except LineFormatError as exc:
            raise _data_error(f"line {n}: {exc}") from exc
    templates, assignments = mine_corpus(contents, cfg.parser.build())
    write_templates(out / "templates.json", templates)
    write_assignments(out / "assignments.bin", assignments)
    _finish(cfg, out, argv, {"lines": len(assignments), "templates": len(templates)})


def cmd_sessionize(args, argv) -> None:
    cfg = _config(args, "sessionizer", window_size=args.window, group_pattern=args.group_pattern,
                  line_format=args.format)
    sc = cfg.sessionizer
    fmt = LineFormat.parse(sc.line_format)
    out = _out(args)
    assignments = read_assignments(args.assignments)
    rows = []
    for n, line in enumerate(read_lines(args.input), start=1):
        try:
            rows.append(fmt.split(line))
        except LineFormatError as exc:
            raise _data_error(f"line {n}: {exc}") from exc
    if "Label" in fmt.fields:
        labels = [is_alert(r["Label"]) for r in rows]
    else:
        log.warning("format has no <Label> field; every line counts as normal")
        labels = [False] * len(rows)
    lines = labeled_lines(assignments, labels, [r["Content"] for r in rows])
    if sc.group_pattern:
        sessions = group_sessions(lines, sc.group_pattern, args.domain)
    else:
        sessions = window_sessions(lines, sc.window_size, args.domain)
    train, test = chrono_split(sessions, sc.train_fraction)
    train, dev = split_dev(train, sc.dev_fraction)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        write_sessions(out / f"{name}.jsonl", part)
    _finish(cfg, out, argv, {name: label_counts(part) for name, part in
                             (("train", train), ("dev", dev), ("test", test))})


def cmd_embed(args, argv) -> None:
    cfg = _config(args, "embedder", seed=args.seed)
    dim = args.dim or cfg.model.d
    out = _out(args)
    templates = read_templates(args.templates)
    if not templates:
        raise _data_error(f"{args.templates} holds no templates")
    if args.embeddings:
        # external encoder output: validate against the template table and copy
        table = load_embeddings(args.embeddings, expected_templates=len(templates))
        save_embeddings(out / "embeddings.bin", table, Path(args.embeddings).name)
    else:
        table = hashed_table([t.tokens for t in templates], dim, cfg.embedder.seed)
        save_embeddings(out / "embeddings.bin", table, f"hashed-{cfg.embedder.seed}")
    _finish(cfg, out, argv, {"rows": table.rows, "dim": table.dim, "source": table.source})


def cmd_synth(args, argv) -> None:
    cfg = _config(args, "synth", source_lines=args.lines, target_lines=args.lines)
    s = cfg.synth
    out = _out(args)
    source, target = paired_domains(s.shared_classes, (2 * args.seed + 1, 2 * args.seed + 2),
                                    s.anomaly_rate, s.target_class_weights or None,
                                    s.normal_templates)
    counts = {}
    for spec, n in ((source, s.source_lines), (target, s.target_lines)):
        if spec.name not in args.domains:
            continue
        lines, truth = generate(spec, n)
        write_corpus(out, spec.name, lines, truth)
        counts[spec.name] = {"lines": n, "anomalous": sum(c is not None for c in truth)}
    _finish(cfg, out, argv, counts)


def _train_section(args) -> PipelineConfig:
    return _config(args, "train", epochs=args.epochs, max_lr=args.max_lr,
                   batch_size=args.batch_size, seed=args.seed)


def cmd_pretrain(args, argv) -> None:
    cfg = _train_section(args)
    tc = cfg.train
    table = load_embeddings(args.embeddings)
    _check_dim(table, cfg.model.d)
    out = _out(args)
    l = cfg.model.l  # noqa: E741
    train = _arrays(_session_file(args.data, "train"), table, l)
    dev_path = _session_file(args.data, "dev")
    dev = materialize_all(read_sessions(dev_path), table, l) if dev_path.exists() else None
    model, metrics = pretrain(train, dev, tc, cfg.model)
    save_model(out / "model.ckpt", model, seed=tc.seed, step=len(metrics.losses))
    metrics.write_jsonl(out / "metrics.jsonl")
    final = metrics.final()
    _finish(cfg, out, argv, {"steps": len(metrics.losses),
                             "dev_f1": None if final is None else final["f1"],
                             "trainable_params": metrics.trainable_params})


def cmd_tune(args, argv) -> None:
    cfg = _train_section(args)
    tc = cfg.train
    table = load_embeddings(args.embeddings)
    _check_dim(table, cfg.model.d)
    out = _out(args)
    l = cfg.model.l  # noqa: E741
    sessions = _sessions(_session_file(args.data, "train"))
    if args.subsample_n is not None:
        sessions = subsample(sessions, args.subsample_n, tc.seed)
    train = materialize_all(sessions, table, l)
    dev_path = _session_file(args.data, "dev")
    dev = materialize_all(read_sessions(dev_path), table, l) if dev_path.exists() else None
    if args.mode == "scratch":
        model, metrics = train_from_scratch(train, dev, tc, cfg.model)
    else:
        if args.backbone is None:
            raise CliError(EXIT_CONFIG, "config", f"--mode {args.mode} needs --from CKPT")
        if not Path(args.backbone).exists():
            raise _data_error(f"missing checkpoint {args.backbone}")
        tuner = adapter_tune if args.mode == "adapter" else fine_tune
        model, metrics = tuner(args.backbone, train, dev, tc, cfg.model)
    save_model(out / "model.ckpt", model, seed=tc.seed, step=len(metrics.losses))
    metrics.write_jsonl(out / "metrics.jsonl")
    final = metrics.final()
    _finish(cfg, out, argv, {"mode": args.mode, "steps": len(metrics.losses),
                             "dev_f1": None if final is None else final["f1"],
                             "trainable_params": metrics.trainable_params})


def cmd_eval(args, argv) -> None:
    cfg = _config(args, "eval", threshold=args.threshold)
    if not Path(args.model).exists():
        raise _data_error(f"missing checkpoint {args.model}")
    model, _ = load_model(args.model)
    table = load_embeddings(args.embeddings)
    _check_dim(table, model.config.d)
    out = _out(args)
    data = _arrays(_session_file(args.data, "test"), table, model.config.l)
    report = evaluate(model.predict(data.x, data.mask), data.y.astype(bool), cfg.eval.threshold)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _finish(cfg, out, argv, report.to_dict())


def cmd_transfer(args, argv) -> None:
    cfg = _config(args, "experiment", runs=args.repeats)
    out = _out(args)
    cfg.write_resolved(out, " ".join(argv))
    summary = run_transfer(cfg.experiment_settings(), args.seed, out)
    print(json.dumps(summary["arms"], sort_keys=True))


def cmd_lowresource(args, argv) -> None:
    sizes = None
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, "config", f"--sizes: {exc}") from exc
    cfg = _config(args, "experiment", runs=args.repeats, lowres_sizes=sizes)
    out = _out(args)
    cfg.write_resolved(out, " ".join(argv))
    arms = tuple(a for a in args.arms.split(",") if a)
    if set(arms) - set(ARMS):
        raise CliError(EXIT_CONFIG, "config", f"--arms must be drawn from {ARMS}")
    rows = run_lowresource(cfg.experiment_settings(), args.seed, out, arms)
    print(json.dumps(rows, sort_keys=True))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="translog", description="Log anomaly detection with transferable adapters.",
        epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_: str, func) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_, description=help_, epilog=EPILOG,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON pipeline config; flags override it")
        sp.set_defaults(func=func)
        return sp

    sp = add("parse", "mine templates from a raw log", cmd_parse)
    sp.add_argument("--input", required=True, help="raw log file")
    sp.add_argument("--format", help="header format, e.g. '<Label> <Timestamp> <Content>'")
    sp.add_argument("--preset", help="mask preset: none, generic, hdfs, bgl, thunderbird")

    sp = add("sessionize", "window or group parsed lines into train/dev/test sessions",
             cmd_sessionize)
    sp.add_argument("--input", required=True, help="the raw log that was parsed")
    sp.add_argument("--assignments", required=True, help="assignments.bin from parse")
    sp.add_argument("--format", help="header format of the raw log")
    sp.add_argument("--window", type=int, help="window size in lines")
    sp.add_argument("--group-pattern", help="regex whose match (or group 1) keys a session")
    sp.add_argument("--domain", default="", help="domain tag stored on each session")

    sp = add("embed", "write the embedding table for mined templates", cmd_embed)
    sp.add_argument("--templates", required=True, help="templates.json from parse")
    source = sp.add_mutually_exclusive_group()
    source.add_argument("--embeddings", help="vectors from an external encoder to validate and copy")
    source.add_argument("--hashed", action="store_true", help="hashed stand-in vectors (default)")
    sp.add_argument("--dim", type=int, help="embedding width (default: model d)")
    sp.add_argument("--seed", type=int, help="hash seed")

    sp = add("synth", "generate paired synthetic source and target logs", cmd_synth)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lines", type=int, help="lines per domain")
    sp.add_argument("--domains", nargs="+", default=["source", "target"],
                    choices=["source", "target"])

    def add_train_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--data", required=True,
                        help="directory with train.jsonl and dev.jsonl, or a sessions file")
        sp.add_argument("--embeddings", required=True, help="embeddings.bin")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--max-lr", dest="max_lr", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)

    sp = add("pretrain", "train encoder and head on the source domain", cmd_pretrain)
    add_train_flags(sp)

    sp = add("tune", "adapt a pretrained model to a target domain", cmd_tune)
    add_train_flags(sp)
    sp.add_argument("--mode", choices=["adapter", "finetune", "scratch"], default="adapter")
    sp.add_argument("--from", dest="backbone", help="pretrained model.ckpt")
    sp.add_argument("--subsample-n", type=int, help="train on this many sampled sessions")

    sp = add("eval", "score a model on held-out sessions", cmd_eval)
    sp.add_argument("--model", required=True, help="model.ckpt")
    sp.add_argument("--data", required=True, help="directory with test.jsonl, or a sessions file")
    sp.add_argument("--embeddings", required=True, help="embeddings.bin")
    sp.add_argument("--threshold", type=float)

    ep = sub.add_parser("experiment", help="synthetic transfer studies")
    esub = ep.add_subparsers(dest="experiment", required=True, metavar="STUDY")
    for name, help_, func in (
            ("transfer", "convergence of scratch, fine-tune and adapter arms", cmd_transfer),
            ("lowresource", "test F1 against target training-set size", cmd_lowresource)):
        sp = esub.add_parser(name, help=help_, description=help_, epilog=EPILOG,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON pipeline config; flags override it")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--repeats", type=int, help="seeds per arm (default from config)")
        sp.set_defaults(func=func)
        if name == "lowresource":
            sp.add_argument("--sizes", help="comma-separated training-set sizes")
            sp.add_argument("--arms", default=",".join(ARMS), help="comma-separated arms")
    return p


def _classify(exc: BaseException) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, TrainingDivergence):
        return CliError(EXIT_DIVERGED, "divergence", str(exc))
    if isinstance(exc, (ConfigError, ModelConfigError, SynthConfigError)):
        return CliError(EXIT_CONFIG, "config", str(exc))
    if isinstance(exc, (CorpusError, SessionError, EmbeddingError, CheckpointError,
                        IncompatibleBackbone, LineFormatError, OSError, json.JSONDecodeError)):
        return CliError(EXIT_DATA, "data", str(exc))
    if isinstance(exc, ValueError):
        return CliError(EXIT_CONFIG, "config", str(exc))
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args, argv)
    except Exception as exc:  # noqa: BLE001
        err = _classify(exc)
        sys.stderr.write(json.dumps({"error": err.kind, "message": str(err)}) + "\n")
        return err.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
