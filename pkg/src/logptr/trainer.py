"""Mini-batch training with validation-based model selection, and the model file format.

Model file layout (all integers little-endian)::

    b"LPTR" | u16 format version | u32 CRC-32 of payload | payload
    payload = u32 metadata length | metadata JSON | float32 tensors

The metadata holds configs, label set, vocabulary, epoch, validation PA and a
tensor directory (name, shape, byte offset, byte length) in payload order.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .errors import BadMagic, ChecksumMismatch, EmptyTrainSet, TruncatedFile, VersionMismatch
from .ingest import AnnotatedRecord, DatasetSplit, LabelSet
from .metrics import make_corpus, parsing_accuracy
from .model import ModelConfig, PointerParser
from .numcore import Parameter
from .tokenizer import DEFAULT_VOCAB_SIZE, SubwordVocab, train_vocab

log = logging.getLogger(__name__)

MAGIC = b"LPTR"
FORMAT_VERSION = 1
N_BUCKETS = 4


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.001
    seed: int = 0
    clip_norm: float = 5.0
    patience: int | None = None
    vocab_size: int = DEFAULT_VOCAB_SIZE
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Checkpoint:
    parser: PointerParser
    epoch: int
    val_pa: float | None
    train_config: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_pa: float | None


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list[EpochLog]


def length_buckets(lengths: Sequence[int], n_buckets: int = N_BUCKETS) -> list[np.ndarray]:
    """Indices grouped into ``n_buckets`` contiguous runs of ascending length."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    return [b for b in np.array_split(order, min(n_buckets, len(order))) if len(b)]


def epoch_batches(buckets: list[np.ndarray], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle inside each bucket, cut the concatenation into batches, shuffle batch order."""
    flat = np.concatenate([rng.permutation(b) for b in buckets])
    batches = [flat[i:i + batch_size] for i in range(0, len(flat), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def evaluate_pa(parser: PointerParser, records: Sequence[AnnotatedRecord], batch_size: int = 64) -> float:
    preds = parser.decode_messages([r.message_tokens for r in records], batch_size)
    corpus = make_corpus(
        (r.line_id, parser.parse_tokens(r.message_tokens, y).template, r.template_tokens)
        for r, y in zip(records, preds)
    )
    return parsing_accuracy(corpus, parser.label_set.mode, parser.label_set.labels)


def _snapshot(parser: PointerParser) -> PointerParser:
    params = {name: Parameter(p.data.copy(), name=name) for name, p in parser.params.items()}
    return PointerParser(parser.config, parser.vocab, parser.label_set, params)


def train(
    split: DatasetSplit,
    label_set: LabelSet,
    model_config: ModelConfig | None = None,
    config: TrainConfig | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    config = config or TrainConfig()
    records = [r for r in split.train if r.aligned]
    if not records:
        raise EmptyTrainSet("no aligned training records")
    vocab = train_vocab((w for r in records for w in r.message_tokens), config.vocab_size)
    base = model_config or ModelConfig()
    cfg = ModelConfig(**{**base.to_dict(), "m": label_set.m, "vocab_size": vocab.size})
    parser = PointerParser(cfg, vocab, label_set, seed=config.seed)
    params = parser.parameters()

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    order_rng = np.random.default_rng(seeds[0])
    drop_rng = np.random.default_rng(seeds[1])
    buckets = length_buckets([len(r.message_tokens) for r in records])
    val = [r for r in split.validation if r.aligned] or records

    best: Checkpoint | None = None
    history: list[EpochLog] = []
    stale = 0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in epoch_batches(buckets, config.batch_size, order_rng):
            batch = [records[i] for i in idx]
            loss = parser.loss([r.message_tokens for r in batch], [r.target for r in batch], True, drop_rng)
            loss.backward()
            nc.clip_grad_norm(params, config.clip_norm)
            nc.adam_step(params, config.lr)
            total += loss.item() * len(batch)
        val_pa = evaluate_pa(parser, val, config.eval_batch_size)
        row = EpochLog(epoch, total / len(records), val_pa)
        history.append(row)
        log.info("epoch %d loss %.4f val_pa %.4f", epoch, row.train_loss, val_pa)
        if on_epoch:
            on_epoch(row)
        if best is None or val_pa > best.val_pa:
            best = Checkpoint(_snapshot(parser), epoch, val_pa, config)
            stale = 0
        else:
            stale += 1
        if config.patience is not None and stale >= config.patience:
            break
    final = Checkpoint(parser, history[-1].epoch, history[-1].val_pa, config)
    return TrainResult(best, final, history)


# ---------------------------------------------------------------- model file

def write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_model(ckpt: Checkpoint) -> bytes:
    parser = ckpt.parser
    directory, blobs, offset = [], [], 0
    for name, p in parser.params.items():
        blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "model_config": parser.config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "labels": list(parser.label_set.labels),
        "mode": parser.label_set.mode,
        "vocab_sha256": parser.vocab.digest(),
        "vocab": list(parser.vocab.pieces),
        "epoch": ckpt.epoch,
        "val_pa": ckpt.val_pa,
        "tensors": directory,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    payload = struct.pack("<I", len(meta_bytes)) + meta_bytes + b"".join(blobs)
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, zlib.crc32(payload)) + payload


def save_model(ckpt: Checkpoint, path: str | Path) -> None:
    write_atomic(path, dump_model(ckpt))


def _parse_meta(payload: bytes) -> tuple[dict, int]:
    if len(payload) < 4:
        raise TruncatedFile("model file ends inside the metadata header")
    (meta_len,) = struct.unpack_from("<I", payload)
    if len(payload) < 4 + meta_len:
        raise TruncatedFile("model file ends inside the metadata block")
    meta = json.loads(payload[4:4 + meta_len].decode("utf-8"))
    end = 4 + meta_len + sum(t["nbytes"] for t in meta["tensors"])
    if len(payload) < end:
        raise TruncatedFile(f"model file holds {len(payload) - 4 - meta_len} tensor bytes, expected {end - 4 - meta_len}")
    return meta, 4 + meta_len


def parse_model(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a model file (bad magic bytes)")
    if len(data) < 10:
        raise TruncatedFile("model file ends inside the header")
    version, crc = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(version, FORMAT_VERSION)
    payload = data[10:]
    if zlib.crc32(payload) != crc:
        try:
            _parse_meta(payload)
        except TruncatedFile:
            raise
        except Exception:
            pass
        raise ChecksumMismatch("model file payload does not match its CRC-32")
    meta, base = _parse_meta(payload)
    params = {}
    for t in meta["tensors"]:
        start = base + t["offset"]
        arr = np.frombuffer(payload[start:start + t["nbytes"]], dtype="<f4").astype(np.float32)
        params[t["name"]] = Parameter(arr.reshape(t["shape"]), name=t["name"])
    label_set = LabelSet(tuple(meta["labels"]), meta["mode"])
    vocab = SubwordVocab(meta["vocab"])
    parser = PointerParser(ModelConfig(**meta["model_config"]), vocab, label_set, params)
    return Checkpoint(parser, meta["epoch"], meta["val_pa"], TrainConfig(**meta["train_config"]))


def load_model(path: str | Path) -> Checkpoint:
    return parse_model(Path(path).read_bytes())
