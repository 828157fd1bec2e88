"""Command-line pipeline: prepare, train, parse, evaluate, benchmark.

Every command writes its outputs atomically under ``--out`` and keeps a
``manifest.json`` index there.  Failures print ``ERROR <code>: <message>`` on
standard error and exit with that code (2 for ingest errors, 3 for numeric
failures, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, EmptyMessage, LogPtrError, MissingColumn, NumericError
from .ingest import (
    DEFAULT_CATEGORY_LABELS,
    GENERAL,
    VARIABLE_AWARE,
    AnnotatedRecord,
    DatasetSplit,
    LabelSet,
    annotate,
    load_structured_csv,
    pre_tokenize,
    read_jsonl,
    read_labels_file,
    split_dataset,
)
from .metrics import category_confusion, group_accuracy, make_corpus, metrics_report, parsing_accuracy
from .model import ModelConfig, ParseResult
from .trainer import TrainConfig, load_model, save_model, train, write_atomic

log = logging.getLogger("logptr")

RECORDS = "records.jsonl"
SPLIT = "split.json"
FAILURES = "alignment_failures.json"
LABELS = "labels.json"
MANIFEST = "manifest.json"
MODEL = "model.lptr"
EPOCH_LOG = "epoch_log.csv"
REPORT = "report.json"


@dataclass
class RunConfig:
    mode: str = GENERAL
    labels: list[str] | None = None
    seed: int = 0
    # TrainConfig
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.001
    clip_norm: float = 5.0
    patience: int | None = None
    vocab_size: int = 8000
    eval_batch_size: int = 64
    # ModelConfig
    embed_dim: int = 256
    hidden: int = 256
    dropout: float = 0.2
    max_decode_factor: int = 2

    def train_config(self) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def model_config(self) -> ModelConfig:
        keys = {f.name for f in fields(ModelConfig)} - {"m", "vocab_size"}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def label_set(self) -> LabelSet:
        if self.mode == GENERAL:
            return LabelSet.general(*(self.labels or []))
        if self.mode == VARIABLE_AWARE:
            return LabelSet.variable_aware(self.labels or DEFAULT_CATEGORY_LABELS)
        raise ConfigError(f"unknown mode {self.mode!r}")


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then ``LOGPTR_SEED``, then the JSON file, then explicit overrides."""
    values: dict = {}
    env_seed = os.environ.get("LOGPTR_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"LOGPTR_SEED is not an integer: {env_seed!r}") from None
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**values)
        cfg.train_config(), cfg.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------- artifacts

def write_json(path: Path, obj) -> None:
    write_atomic(path, (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8"))


def write_lines(path: Path, rows: Sequence[dict]) -> None:
    text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
    write_atomic(path, text.encode("utf-8"))


def update_manifest(out: Path, command: str, artifacts: dict[str, str], **info) -> None:
    path = out / MANIFEST
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"artifacts": {}}
    manifest["artifacts"].update(artifacts)
    manifest.setdefault("commands", {})[command] = info
    write_json(path, manifest)


def quarantine_failures(split: DatasetSplit) -> DatasetSplit:
    """Unaligned records leave train and validation and join the test set."""
    moved = [r for r in split.train + split.validation if not r.aligned]
    return DatasetSplit(
        [r for r in split.train if r.aligned],
        [r for r in split.validation if r.aligned],
        split.test + moved,
        split.seed,
    )


def load_prepared(data: Path) -> tuple[LabelSet, DatasetSplit]:
    meta = json.loads((data / LABELS).read_text(encoding="utf-8"))
    label_set = LabelSet(tuple(meta["labels"]), meta["mode"])
    records = {r.line_id: r for r in read_jsonl(data / RECORDS)}
    manifest = json.loads((data / SPLIT).read_text(encoding="utf-8"))
    parts = [[records[i] for i in manifest[k]] for k in ("train", "validation", "test")]
    return label_set, DatasetSplit(*parts, manifest["seed"])


# ---------------------------------------------------------------- commands

def prepare(input_csv: Path, out: Path, cfg: RunConfig) -> dict:
    label_set = cfg.label_set()
    raw = load_structured_csv(input_csv, label_set)
    records, failures = annotate(raw, label_set)
    split = quarantine_failures(split_dataset(records, cfg.seed))
    out.mkdir(parents=True, exist_ok=True)
    write_lines(out / RECORDS, [r.to_json() for r in records])
    write_json(out / SPLIT, split.manifest())
    write_json(out / FAILURES, {"count": len(failures), "line_ids": failures})
    write_json(out / LABELS, {"mode": label_set.mode, "labels": list(label_set.labels)})
    summary = {
        "input": str(input_csv),
        "records": len(records),
        "alignment_failures": len(failures),
        "seed": cfg.seed,
        "mode": label_set.mode,
    }
    update_manifest(
        out, "prepare",
        {"records": RECORDS, "split": SPLIT, "alignment_failures": FAILURES, "labels": LABELS},
        **summary,
    )
    return summary


def train_model(data: Path, model_path: Path, cfg: RunConfig) -> dict:
    label_set, split = load_prepared(data)
    out = model_path.parent
    rows = []
    try:
        result = train(split, label_set, cfg.model_config(), cfg.train_config(), on_epoch=rows.append)
    except NumericError as exc:
        raise NumericError(f"epoch {len(rows) + 1}: {exc}") from exc
    save_model(result.best, model_path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_pa"])
    for row in result.log:
        writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_pa)])
    log_path = out / EPOCH_LOG
    write_atomic(log_path, buf.getvalue().encode("utf-8"))
    summary = {"best_epoch": result.best.epoch, "val_pa": result.best.val_pa, "epochs_run": len(result.log)}
    update_manifest(
        out, "train",
        {"model": model_path.name, "epoch_log": log_path.name},
        data=str(data), config=asdict(cfg), **summary,
    )
    return summary


def _read_inputs(path: Path) -> list[tuple[int, str]]:
    """(line_id, content) pairs from a structured CSV or a plain log file."""
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "Content" not in reader.fieldnames:
                raise MissingColumn("Content")
            has_id = "LineId" in reader.fieldnames
            return [
                (int(row["LineId"]) if has_id else n, row["Content"] or "")
                for n, row in enumerate(reader, 1)
            ]
    with open(path, encoding="utf-8") as fh:
        return [(n, line.rstrip("\n")) for n, line in enumerate(fh, 1)]


def _parse_row(line_id: int, result: ParseResult | None, warning: str | None = None) -> dict:
    if result is None:
        return {"line_id": line_id, "template": "", "variables": [], "warning": warning}
    row = {"line_id": line_id, **result.to_json()}
    row["variables"] = [{"label": v["label"], "span_tokens": v["span_tokens"]} for v in result.variables]
    row.pop("tags", None)
    return row


def parse_file(model_path: Path, input_path: Path, out_path: Path, batch_size: int = 64) -> dict:
    parser = load_model(model_path).parser
    inputs = _read_inputs(input_path)
    tokens: dict[int, list[str]] = {}
    rows: list[dict | None] = []
    for pos, (line_id, content) in enumerate(inputs):
        try:
            tokens[pos] = pre_tokenize(content)
            rows.append(None)
        except EmptyMessage:
            rows.append(_parse_row(line_id, None, "empty message"))
    order = sorted(tokens)
    targets = parser.decode_messages([tokens[p] for p in order], batch_size)
    for p, y in zip(order, targets):
        rows[p] = _parse_row(inputs[p][0], parser.parse_tokens(tokens[p], y))
    write_lines(out_path, rows)
    degraded = sum("warning" in r for r in rows)
    update_manifest(out_path.parent, "parse", {"parsed": out_path.name}, model=str(model_path), lines=len(rows), degraded=degraded)
    return {"lines": len(rows), "degraded": degraded}


def evaluate_split(model_path: Path, data: Path, split_name: str = "test", name: str | None = None) -> dict:
    parser = load_model(model_path).parser
    label_set, split = load_prepared(data)
    records: list[AnnotatedRecord] = {
        "train": split.train, "validation": split.validation, "test": split.test,
    }[split_name]
    preds = parser.decode_messages([r.message_tokens for r in records])
    corpus = make_corpus(
        (r.line_id, parser.parse_tokens(r.message_tokens, y).template, r.template_tokens)
        for r, y in zip(records, preds)
    )
    labels = label_set.labels
    name = name or data.name
    report = metrics_report({name: {
        "ga": group_accuracy(corpus, labels),
        "pa": parsing_accuracy(corpus, label_set.mode, labels),
    }})
    if label_set.mode == VARIABLE_AWARE:
        report[name]["category_confusion"] = category_confusion(corpus, labels)
    report[name]["messages"] = len(corpus)
    return report


def _find_datasets(root: Path) -> dict[str, Path]:
    found = {}
    for path in sorted(root.rglob("*.csv")):
        if path.parent == root:
            name = path.name.split("_")[0] if "_structured" in path.name else path.stem
        else:
            name = path.relative_to(root).parts[0]
        if "templates" in path.name:
            continue
        found.setdefault(name, path)
    return found


def _benchmark_one(name: str, csv_path: Path, out: Path, cfg: RunConfig, force: bool) -> dict:
    ds_out = out / name
    report_path = ds_out / REPORT
    if report_path.exists() and not force:
        log.info("%s: reusing %s", name, report_path)
        return json.loads(report_path.read_text(encoding="utf-8"))[name]
    prepare(csv_path, ds_out / "data", cfg)
    train_model(ds_out / "data", ds_out / MODEL, cfg)
    report = evaluate_split(ds_out / MODEL, ds_out / "data", "test", name)
    write_json(report_path, report)
    return report[name]


def benchmark(datasets: Path, out: Path, cfg: RunConfig, force: bool = False, jobs: int = 1) -> dict:
    found = _find_datasets(datasets)
    if not found:
        raise ConfigError(f"no CSV datasets under {datasets}")
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = {n: pool.submit(_benchmark_one, n, p, out, cfg, force) for n, p in found.items()}
            rows = {n: f.result() for n, f in futures.items()}
    else:
        rows = {n: _benchmark_one(n, p, out, cfg, force) for n, p in found.items()}
    table = metrics_report(rows)
    return table


# ---------------------------------------------------------------- argument parsing

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)


RUN_FLAGS = ("seed", "epochs", "batch_size", "lr", "patience", "vocab_size", "embed_dim", "hidden", "dropout", "mode")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="logptr", description="Pointer-network log parser")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="annotate and split a structured CSV")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--mode", choices=[GENERAL, VARIABLE_AWARE])
    p.add_argument("--labels-file", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train on a prepared data directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    _add_run_flags(p)

    p = sub.add_parser("parse", help="parse raw log lines or a CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="GA/PA on one split of a prepared data directory")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("benchmark", help="prepare, train and evaluate every dataset in a directory")
    p.add_argument("--datasets", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="table JSON; per-dataset artifacts go beside it")
    p.add_argument("--mode", choices=[GENERAL, VARIABLE_AWARE])
    p.add_argument("--force", action="store_true", help="recompute datasets that already have a report")
    p.add_argument("--jobs", type=int, default=1)
    _add_run_flags(p)
    return ap


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in RUN_FLAGS}
    labels_file = getattr(args, "labels_file", None)
    if labels_file is not None:
        overrides["labels"] = list(read_labels_file(labels_file))
    return load_run_config(getattr(args, "config", None), overrides)


def run(args: argparse.Namespace) -> dict:
    if args.command == "prepare":
        return prepare(args.input, args.out, _run_config(args))
    if args.command == "train":
        return train_model(args.data, args.out, _run_config(args))
    if args.command == "parse":
        return parse_file(args.model, args.input, args.out)
    if args.command == "evaluate":
        report = evaluate_split(args.model, args.data, args.split)
        write_json(args.out, report)
        update_manifest(args.out.parent, "evaluate", {"report": args.out.name}, model=str(args.model), split=args.split)
        return report
    if args.command == "benchmark":
        table = benchmark(args.datasets, args.out.parent, _run_config(args), args.force, args.jobs)
        write_json(args.out, table)
        update_manifest(args.out.parent, "benchmark", {"table": args.out.name}, datasets=sorted(k for k in table if k != "aggregate"))
        return table
    raise ConfigError(f"unknown command {args.command}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = run(args)
    except LogPtrError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"ERROR 1: {exc}", file=sys.stderr)
        return 1
    if args.command in ("prepare", "train", "parse"):
        print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
