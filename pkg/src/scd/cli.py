"""Command-line entry point: ``scd <command> [--config FILE] [--seed N] [--out-dir DIR] [--override k=v ...]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .evaluation import DataFormatError, LabeledSet, StsPairSet, evaluate
from .synthetic import SyntheticSpec, generate
from .trainer import (
    CheckpointError,
    DivergenceError,
    GridSearchSpec,
    init_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_log,
)
from .trainer import grid_search as run_grid_search

log = logging.getLogger("scd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
ABLATION_ROWS = ("joint", "ls_only", "lc_only")


class DataError(Exception):
    pass


# --- helpers --------------------------------------------------------------------


def _layer(cfg: RunConfig, path) -> RunConfig:
    """Apply one config file on top of ``cfg``; data paths it sets are relative to its folder."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    new = cfgmod.parse(text, cfg)
    base_dir = Path(path).resolve().parent
    fix = {}
    for key in cfgmod.DATA_KEYS:
        value = getattr(new, key)
        if value and value != getattr(cfg, key) and not Path(value).is_absolute():
            fix[key] = str(base_dir / value)
    return replace(new, **fix)


def resolve_config(args) -> RunConfig:
    """Config files in order, then overrides, then --seed."""
    cfg = RunConfig()
    for path in args.config:
        cfg = _layer(cfg, path)
    for ov in args.override:
        cfg = cfgmod.apply_override(cfg, ov)
    if args.seed is not None:
        cfg = cfgmod.apply_override(cfg, f"train.seed={args.seed}")
    return cfg


def read_corpus(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh]
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from None
    except UnicodeDecodeError as e:
        raise DataError(f"corpus {path} is not valid UTF-8: {e}") from None
    corpus = [s for s in lines if s]
    if not corpus:
        raise DataError(f"corpus {path} has no sentences")
    return corpus


def _load(loader, path, what: str):
    try:
        return loader(path)
    except OSError as e:
        raise DataError(f"cannot read {what} {path}: {e}") from None
    except ValueError as e:
        raise DataError(str(e)) from None


def load_pairs(path) -> StsPairSet:
    if not path:
        raise ConfigError("missing required field data.pairs (path to the scored pair file)")
    return _load(StsPairSet.load, path, "pair file")


def load_labeled(cfg: RunConfig) -> tuple[LabeledSet | None, LabeledSet | None]:
    if bool(cfg.train_labeled) != bool(cfg.test_labeled):
        raise ConfigError("data.train_labeled and data.test_labeled must be given together")
    if not cfg.train_labeled:
        return None, None
    return (_load(LabeledSet.load, cfg.train_labeled, "labeled file"),
            _load(LabeledSet.load, cfg.test_labeled, "labeled file"))


def load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from None


def out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(path: Path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return buf.getvalue()


def _train_checked(corpus, train_cfg, **kw):
    try:
        return train(corpus, train_cfg, **kw)
    except DivergenceError:
        raise
    except ValueError as e:  # corpus smaller than a batch
        raise DataError(str(e)) from None


def _report(cfg: RunConfig, ck, pairs, labeled):
    try:
        return evaluate(ck, pairs, *labeled, positive_threshold=cfg.positive_threshold, l2=cfg.probe_l2,
                        n_steps=cfg.probe_steps)
    except ValueError as e:
        raise DataError(str(e)) from None


# --- commands ---------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    corpus = read_corpus(cfg.require_corpus())
    out = out_dir(args)
    (out / "resolved_config.ini").write_text(cfgmod.serialize(cfg), encoding="utf-8")
    result = _train_checked(corpus, cfg.train)
    save_checkpoint(result.checkpoint, out / "checkpoint.scd")
    result.checkpoint.vocab.save(out / "vocab.txt")
    write_loss_log(result.log, out / "loss.csv")
    last = result.log[-1] if result.log else {}
    print(f"checkpoint={out / 'checkpoint.scd'}")
    print(f"loss_log={out / 'loss.csv'}")
    print(f"steps={result.checkpoint.step}")
    if last:
        print(f"final_total={last['total']!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    if args.pairs:
        cfg = replace(cfg, pairs=args.pairs)
    if args.train_labeled or args.test_labeled:
        cfg = replace(cfg, train_labeled=args.train_labeled, test_labeled=args.test_labeled)
    pairs = load_pairs(cfg.pairs)
    labeled = load_labeled(cfg)
    ck = load_ckpt(args.checkpoint)
    report = _report(cfg, ck, pairs, labeled)
    out = out_dir(args)
    (out / "report.txt").write_text(report.to_keyvalue(), encoding="utf-8")
    (out / "report.csv").write_text(report.csv_text(Path(args.checkpoint).stem), encoding="utf-8")
    sys.stdout.write(report.to_keyvalue())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    corpus = read_corpus(cfg.require_corpus())
    pairs = load_pairs(cfg.pairs)
    labeled = load_labeled(cfg)
    out = out_dir(args)
    (out / "resolved_config.ini").write_text(cfgmod.serialize(cfg), encoding="utf-8")
    rows = []
    for mode in ABLATION_ROWS:
        result = _train_checked(corpus, replace(cfg.train, ablation_mode=mode))
        save_checkpoint(result.checkpoint, out / f"{mode}.scd")
        write_loss_log(result.log, out / f"{mode}_loss.csv")
        rep = _report(cfg, result.checkpoint, pairs, labeled)
        rows.append((mode, rep))
        log.info("%s spearman=%.4f", mode, rep.spearman)
    untrained = init_checkpoint(corpus, cfg.train)
    save_checkpoint(untrained, out / "untrained.scd")
    rows.append(("untrained", _report(cfg, untrained, pairs, labeled)))
    header = ("mode", "spearman", "alignment", "uniformity", "transfer_accuracy")
    table = [(m, repr(r.spearman), repr(r.alignment), repr(r.uniformity),
              "" if r.transfer_accuracy is None else repr(r.transfer_accuracy)) for m, r in rows]
    sys.stdout.write(write_csv(out / "ablation.csv", header, table))
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    cfg = resolve_config(args)
    corpus = read_corpus(cfg.require_corpus())
    pairs = load_pairs(cfg.pairs)
    spec = cfg.grid or GridSearchSpec()
    out = out_dir(args)
    try:
        result = run_grid_search(corpus, pairs, spec, cfg.train)
    except DivergenceError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    (out / "best_hyperparams.ini").write_text(cfgmod.hyperparams_fragment(result.best), encoding="utf-8")
    header = ("stage", "alpha", "lambda", "r_a", "r_b", "spearman")
    rows = [(r["stage"], repr(r["alpha"]), repr(r["lambda_"]), repr(r["r_a"]), repr(r["r_b"]), repr(r["spearman"]))
            for r in result.table]
    write_csv(out / "grid_scores.csv", header, rows)
    sys.stdout.write(cfgmod.hyperparams_fragment(result.best))
    return EXIT_OK


def cmd_plotdata(args) -> int:
    cfg = resolve_config(args)
    if args.pairs:
        cfg = replace(cfg, pairs=args.pairs)
    pairs = load_pairs(cfg.pairs)
    rows = []
    for path in args.checkpoints:
        rep = _report(cfg, load_ckpt(path), pairs, (None, None))
        rows.append((Path(path).stem, repr(rep.alignment), repr(rep.uniformity), repr(rep.spearman)))
    out = out_dir(args)
    sys.stdout.write(write_csv(out / "plotdata.csv", ("name", "alignment", "uniformity", "spearman"), rows))
    return EXIT_OK


def _synthetic_spec(overrides: list[str]) -> SyntheticSpec:
    types = {f.name: f.type for f in dataclasses.fields(SyntheticSpec)}
    spec = SyntheticSpec()
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form key=value")
        key, raw = (s.strip() for s in ov.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown synthetic-data key {key!r}; known: {', '.join(types)}")
        try:
            if "tuple" in str(types[key]):
                value = tuple(int(x) for x in raw.replace(",", " ").split())
            elif "float" in str(types[key]):
                value = float(raw)
            else:
                value = int(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        spec = replace(spec, **{key: value})
    return spec


def cmd_gen_synthetic(args) -> int:
    if args.config:
        raise ConfigError("gen-synthetic takes no config file; use --override for generator settings")
    spec = _synthetic_spec(args.override)
    bench = generate(0 if args.seed is None else args.seed, spec)
    out = out_dir(args)
    paths = bench.write(out)
    data = ("[data]\ncorpus = corpus.txt\npairs = pairs.tsv\ntrain_labeled = train.tsv\n"
            "test_labeled = test.tsv\n\n")
    (out / "config.ini").write_text(data + cfgmod.BENCHMARK_TEXT, encoding="utf-8")
    for name, path in paths.items():
        print(f"{name}={path}")
    print(f"config={out / 'config.ini'}")
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "train a model and write checkpoint, loss log and resolved config"),
    "eval": (cmd_eval, "score a checkpoint on a pair file (and optional labeled sets)"),
    "ablate": (cmd_ablate, "train joint / ls_only / lc_only from one seed and compare with untrained"),
    "gridsearch": (cmd_gridsearch, "coarse-then-fine hyperparameter search on validation Spearman"),
    "plotdata": (cmd_plotdata, "alignment / uniformity / Spearman per checkpoint as CSV"),
    "gen-synthetic": (cmd_gen_synthetic, "write the seeded synthetic benchmark and a matching config"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[],
                        help="run config file (INI sections); repeat to layer files, later ones win")
    common.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default: current)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. objective.alpha=0.1 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="scd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}
    p = parsers["eval"]
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", help="pair file; defaults to data.pairs")
    p.add_argument("--train-labeled")
    p.add_argument("--test-labeled")
    p = parsers["plotdata"]
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--pairs", help="pair file; defaults to data.pairs")
    return parser


def _thread_cap() -> int | None:
    raw = os.environ.get("SCD_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SCD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SCD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        cap = _thread_cap()
        limits = threadpool_limits(cap) if cap else contextlib.nullcontext()
        with limits:
            return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DataFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
