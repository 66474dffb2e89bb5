"""Command-line pipeline: generate | train | evaluate | report | selftest.

A run directory holds everything one configuration produced::

    config.json          resolved RunConfig (rewritten by every command)
    manifest.json        corpus entries, prefix-notation expressions
    data/<id>.csv        training samples, columns x0..x{d-1}, y
    models/<id>.json     trained surrogate (hex-float weights)
    models/<id>.train.json   training outcome for that function
    train_log.csv        function_id, epochs, best_val_loss, status
    scores.csv, summary.csv, report.json   evaluation (oracle runs go to oracle/)
    score_distribution.csv                 written by ``report``

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classify import METHODS, THRESHOLD_NOTE, read_summary_csv, run_evaluation, write_report
from .errors import AddsepError, FormatError, IncompleteRun, MissingModel, NonFiniteLoss
from .experiment import train_on
from .funcgen import (
    CorpusConfig,
    SamplingConfig,
    SymbolicFunction,
    function_from_entry,
    function_to_entry,
    generate_corpus,
    sample_training_data,
)
from .mlp import DEFAULT_HIDDEN, Dataset, TrainConfig, atomic_write_text, load_model, save_model

log = logging.getLogger("addsep")

MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    workers: int = 1
    methods: tuple[int, ...] = METHODS
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["hidden"] = list(self.hidden)
        d["corpus"]["arities"] = list(self.corpus.arities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        try:
            sub = {
                "corpus": CorpusConfig(**d.pop("corpus", {})),
                "train": TrainConfig(**d.pop("train", {})),
                "sampling": SamplingConfig(**d.pop("sampling", {})),
            }
            if "methods" in d:
                d["methods"] = tuple(int(m) for m in d["methods"])
            if "hidden" in d:
                d["hidden"] = tuple(int(h) for h in d["hidden"])
            cfg = cls(**d, **sub)
        except TypeError as exc:
            raise UsageError(f"bad config: {exc}") from None
        cfg.corpus = dataclasses.replace(cfg.corpus, rng_seed=cfg.seed)
        return cfg


def parse_methods(text: str) -> tuple[int, ...]:
    """``"1,2,5-8"`` -> (1, 2, 5, 6, 7, 8)."""
    out: set[int] = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-")
                out.update(range(int(lo), int(hi) + 1))
            elif part:
                out.add(int(part))
    except ValueError:
        raise UsageError(f"cannot parse method list {text!r}") from None
    if not out or not out <= set(METHODS):
        raise UsageError(f"methods must be drawn from 1-8, got {text!r}")
    return tuple(sorted(out))


def resolve_config(args) -> RunConfig:
    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    elif args.out and (Path(args.out) / "config.json").exists():
        doc = json.loads((Path(args.out) / "config.json").read_text())
    for key in ("seed", "out", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "methods", None):
        doc["methods"] = list(parse_methods(args.methods))
    cfg = RunConfig.from_dict(doc)
    if cfg.workers < 1:
        raise UsageError("--workers must be >= 1")
    return cfg


def _save_config(cfg: RunConfig) -> None:
    atomic_write_text(Path(cfg.out) / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


# -- generate -----------------------------------------------------------------


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k}" for k in range(data.dim)] + ["y"])
    for x, y in zip(data.inputs.tolist(), data.outputs.tolist()):
        w.writerow([repr(v) for v in x] + [repr(y)])
    return buf.getvalue()


def load_dataset_csv(path) -> Dataset:
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Dataset(rows[:, :-1], rows[:, -1])


def cmd_generate(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    corpus = generate_corpus(cfg.corpus)
    _save_config(cfg)
    for f in corpus:
        atomic_write_text(out / "data" / f"{f.id}.csv", dataset_to_csv(sample_training_data(f, cfg.sampling)))
    manifest = {
        "format_version": MANIFEST_VERSION,
        "grammar": "(+ e e) | (* e e) | (sub KIND xN)",
        "corpus": cfg.to_dict()["corpus"],
        "functions": [function_to_entry(f) for f in corpus],
    }
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=1) + "\n")
    n_sep = sum(f.label.value == "separable" for f in corpus)
    log.info("wrote %d functions (%d separable) to %s", len(corpus), n_sep, path)
    return path


def load_manifest(run_dir) -> list[SymbolicFunction]:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise IncompleteRun(f"no manifest at {path}; run `addsep generate --out {run_dir}` first")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('format_version')!r}")
    return [function_from_entry(e) for e in doc["functions"]]


# -- train --------------------------------------------------------------------


def _model_paths(out: Path, fid: str) -> tuple[Path, Path]:
    return out / "models" / f"{fid}.json", out / "models" / f"{fid}.train.json"


def _has_valid_model(out: Path, fid: str) -> bool:
    model, meta = _model_paths(out, fid)
    if not (model.exists() and meta.exists()):
        return False
    try:
        load_model(model)
        json.loads(meta.read_text())
    except (OSError, FormatError, json.JSONDecodeError):
        return False
    return True


def _train_one(args) -> dict:
    f, out, train_cfg, hidden = args
    model_path, meta_path = _model_paths(out, f.id)
    data = load_dataset_csv(out / "data" / f"{f.id}.csv")
    t0 = time.perf_counter()
    try:
        net, rep = train_on(f, data, train_cfg, hidden)
    except NonFiniteLoss as exc:
        meta = {"function_id": f.id, "status": "non_finite_loss", "error": str(exc)}
        atomic_write_text(meta_path, json.dumps(meta) + "\n")
        return meta
    save_model(net, model_path)
    meta = {
        "function_id": f.id,
        "status": "ok",
        "epochs": rep.epochs_run,
        "best_epoch": rep.best_epoch,
        "best_val_loss": rep.best_validation_loss,
        "final_training_loss": rep.final_training_loss,
        "seconds": time.perf_counter() - t0,
    }
    atomic_write_text(meta_path, json.dumps(meta) + "\n")
    return meta


def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    corpus = load_manifest(out)
    _save_config(cfg)
    todo = [f for f in corpus if not _has_valid_model(out, f.id)]
    log.info("%d of %d surrogates to train", len(todo), len(corpus))
    jobs = [(f, out, cfg.train, cfg.hidden) for f in todo]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for k, meta in enumerate(pool.map(_train_one, jobs), 1):
                log.info("[%d/%d] %s %s", k, len(jobs), meta["function_id"], meta["status"])
    else:
        for k, job in enumerate(jobs, 1):
            meta = _train_one(job)
            log.info("[%d/%d] %s %s", k, len(jobs), meta["function_id"], meta["status"])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("function_id", "epochs", "best_val_loss", "status"))
    for f in corpus:
        meta_path = _model_paths(out, f.id)[1]
        if not meta_path.exists():
            continue
        meta = json.loads(meta_path.read_text())
        w.writerow((f.id, meta.get("epochs", ""), repr(meta["best_val_loss"]) if "best_val_loss" in meta else "",
                    meta["status"]))
    path = out / "train_log.csv"
    atomic_write_text(path, buf.getvalue())
    return path


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig, oracle: bool = False, partial: bool = False) -> Path:
    out = Path(cfg.out)
    corpus = load_manifest(out)
    _save_config(cfg)
    surrogates = None
    if not oracle:
        surrogates, missing = {}, []
        for f in corpus:
            path = _model_paths(out, f.id)[0]
            if path.exists():
                surrogates[f.id] = load_model(path)
            else:
                missing.append(f.id)
        if missing and not partial:
            raise MissingModel(f"{len(missing)} models missing (first: {missing[0]}); train them or pass --partial")
        corpus = [f for f in corpus if f.id in surrogates]
        if not corpus:
            raise MissingModel("no trained models found")
    report = run_evaluation(corpus, surrogates, cfg.methods, cfg.workers, cfg.sampling)
    dest = out / "oracle" if oracle else out
    write_report(report, dest)
    log.info("evaluation written to %s (%s)", dest, THRESHOLD_NOTE)
    return dest


# -- report -------------------------------------------------------------------


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[k]) for r in rows)) for k, h in enumerate(headers)]
    line = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    body = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join([line, "-" * len(line), *body])


def cmd_report(run_dir, stream=None) -> str:
    stream = stream or sys.stdout
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.csv"
    scores_path = run_dir / "scores.csv"
    if not summary_path.exists() or not scores_path.exists():
        raise IncompleteRun(f"no evaluation in {run_dir}; run `addsep evaluate --out {run_dir}` first")
    rows = read_summary_csv(summary_path)
    if not rows:
        raise IncompleteRun(f"{summary_path} has no method rows")
    ranked = sorted(rows, key=lambda r: (-float(r["accuracy"]), int(r["method"])))
    text = "\n".join([
        "Accuracy at the no-false-positive threshold",
        _table(("classifier", "accuracy", "threshold"), [(r["method"], r["accuracy"], r["threshold"]) for r in ranked]),
        "",
        "Mean scoring time per function (seconds)",
        _table(("classifier", "time_s"), [(r["method"], r["mean_time_s"]) for r in ranked]),
        "",
        f"note: {THRESHOLD_NOTE}",
    ])
    print(text, file=stream)

    with open(scores_path, newline="") as fh:
        scores = list(csv.DictReader(fh))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "label", "score", "function_id"))
    for r in sorted(scores, key=lambda r: (int(r["method"]), r["label"], float(r["score"]))):
        w.writerow((r["method"], r["label"], r["score"], r["function_id"]))
    atomic_write_text(run_dir / "score_distribution.csv", buf.getvalue())
    return text


# -- entry point --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON RunConfig file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="run directory")
    common.add_argument("--workers", type=int)
    common.add_argument("--methods", help="classifier list, e.g. 1,2,5-8")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="addsep", description="Additive separability tests on MLP surrogates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write corpus manifest and training data")
    sub.add_parser("train", parents=[common], help="train one surrogate per manifest entry (resumable)")
    ev = sub.add_parser("evaluate", parents=[common], help="score every classifier")
    ev.add_argument("--oracle", action="store_true", help="score the analytic functions instead of surrogates")
    ev.add_argument("--partial", action="store_true", help="evaluate only functions that have models")
    sub.add_parser("report", parents=[common], help="print accuracy/threshold and timing tables")
    sub.add_parser("selftest", parents=[common], help="run the invariant suites")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            from .selftest import run_all

            return 0 if run_all(seed=args.seed or 0) else 2
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, oracle=args.oracle, partial=args.partial)
        elif args.command == "report":
            cmd_report(cfg.out)
    except UsageError as exc:
        print(f"addsep: {exc}", file=sys.stderr)
        return 1
    except (AddsepError, OSError) as exc:
        print(f"addsep: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
