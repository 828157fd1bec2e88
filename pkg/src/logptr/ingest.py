"""Loading LogHub-style structured CSVs and building pointer supervision.

A message is split into whitespace words ``t_1..t_n``; the input to the model
is the label tokens ``c_1..c_m`` followed by those words and a terminal EOS
slot.  Pointer indices are 1-based over that augmented input: ``1..m`` pick a
label, ``m+1..m+n`` pick a word, ``m+n+1`` is EOS.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    AlignmentFailure,
    EmptyMessage,
    IndexOutOfRange,
    MalformedRow,
    MissingColumn,
    TooFewRecords,
    UnknownLabel,
)

GENERAL = "general"
VARIABLE_AWARE = "variable_aware"

GENERAL_LABEL = "[VAR]"
PLACEHOLDER = "<*>"
# Object ID, location, object name, type, switch, time/duration, computing
# resource, object amount, status code, other parameter.
DEFAULT_CATEGORY_LABELS = (
    "[OID]", "[LOI]", "[OBN]", "[TID]", "[SID]",
    "[TDA]", "[CRS]", "[OBA]", "[STC]", "[OTP]",
)
REQUIRED_COLUMNS = ("LineId", "Content", "EventTemplate")

_BRACKETED = re.compile(r"^\[[^\[\]\s]+\]$")

PointerTarget = tuple[int, ...]


def is_bracketed(token: str) -> bool:
    return bool(_BRACKETED.match(token))


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.mode not in (GENERAL, VARIABLE_AWARE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        bad = [lab for lab in self.labels if not is_bracketed(lab)]
        if bad:
            raise ValueError(f"labels must look like '[NAME]': {bad}")
        want = 1 if self.mode == GENERAL else 10
        if len(self.labels) != want:
            raise ValueError(f"{self.mode} mode needs exactly {want} label(s), got {len(self.labels)}")

    @classmethod
    def general(cls, label: str = GENERAL_LABEL) -> "LabelSet":
        return cls((label,), GENERAL)

    @classmethod
    def variable_aware(cls, labels: Sequence[str] = DEFAULT_CATEGORY_LABELS) -> "LabelSet":
        return cls(tuple(labels), VARIABLE_AWARE)

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        """1-based pointer index of ``label``."""
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise UnknownLabel(label) from None

    def __contains__(self, token: str) -> bool:
        return token in self.labels


def read_labels_file(path: str | Path) -> tuple[str, ...]:
    """Labels from a JSON array or a plain file with one label per line."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.strip()
    if stripped.startswith("["):
        try:
            value = json.loads(stripped)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, list):
            return tuple(str(v) for v in value)
    return tuple(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class RawLogRecord:
    line_id: int
    content: str
    ground_truth_template: str


@dataclass(frozen=True)
class AnnotatedRecord:
    """One message with its gold template.

    ``target`` is None when the gold template could not be aligned to the
    message; such records are only usable for evaluation.
    """

    line_id: int
    message_tokens: tuple[str, ...]
    template_tokens: tuple[str, ...]
    target: PointerTarget | None = None

    @property
    def aligned(self) -> bool:
        return self.target is not None

    def to_json(self) -> dict:
        return {
            "line_id": self.line_id,
            "tokens": list(self.message_tokens),
            "template": list(self.template_tokens),
            "target": None if self.target is None else list(self.target),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotatedRecord":
        target = obj.get("target")
        return cls(
            int(obj["line_id"]),
            tuple(obj["tokens"]),
            tuple(obj["template"]),
            None if target is None else tuple(int(i) for i in target),
        )


@dataclass
class DatasetSplit:
    train: list[AnnotatedRecord]
    validation: list[AnnotatedRecord]
    test: list[AnnotatedRecord]
    seed: int
    extra: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "train": [r.line_id for r in self.train],
            "validation": [r.line_id for r in self.validation],
            "test": [r.line_id for r in self.test],
        }


def pre_tokenize(content: str) -> list[str]:
    tokens = content.split()
    if not tokens:
        raise EmptyMessage()
    return tokens


def normalize_template(
    template: str,
    label_set: LabelSet,
    category_labels: Iterable[str] = DEFAULT_CATEGORY_LABELS,
    row: int | None = None,
) -> list[str]:
    """Split a gold template into words and labels of ``label_set``.

    Pointers address whole words, so a word that only partly consists of a
    variable (``blk_<*>``, ``<*>]``) is treated as a variable in its entirety.
    In general mode ``<*>`` and every category label collapse to the single
    label.
    """
    if label_set.mode == GENERAL:
        collapse = {PLACEHOLDER, *category_labels, *label_set.labels}
        var = label_set.labels[0]
    else:
        collapse = set()
        var = None
    out = []
    for tok in template.split():
        if tok in label_set:
            out.append(tok)
        elif tok in collapse:
            out.append(var)
        elif is_bracketed(tok):
            raise UnknownLabel(tok, row)
        else:
            out.append(_embedded_label(tok, label_set, collapse, var, row) or tok)
    return out


def _embedded_label(tok, label_set, collapse, var, row):
    hits = []
    for lab in (*label_set.labels, *collapse):
        pos = tok.find(lab)
        if pos >= 0:
            hits.append((pos, lab))
    if not hits:
        if PLACEHOLDER in tok:
            # variable-aware files must carry category labels, not <*>
            raise UnknownLabel(PLACEHOLDER, row)
        return None
    lab = min(hits)[1]
    return lab if lab in label_set else var


def load_structured_csv(
    path: str | Path,
    label_set: LabelSet,
    category_labels: Iterable[str] = DEFAULT_CATEGORY_LABELS,
) -> list[RawLogRecord]:
    category_labels = tuple(category_labels)
    records = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh, strict=True)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        row_no = 0
        try:
            for row_no, row in enumerate(reader, start=1):
                if None in row or any(row.get(c) is None for c in REQUIRED_COLUMNS):
                    raise MalformedRow(row_no, "wrong number of fields")
                try:
                    line_id = int(row["LineId"])
                except ValueError:
                    raise MalformedRow(row_no, f"LineId {row['LineId']!r} is not an integer") from None
                if line_id < 1:
                    raise MalformedRow(row_no, "LineId must be positive")
                content = row["Content"]
                if not content.strip():
                    raise MalformedRow(row_no, "empty Content")
                tokens = normalize_template(row["EventTemplate"], label_set, category_labels, row_no)
                records.append(RawLogRecord(line_id, content, " ".join(tokens)))
        except csv.Error as exc:
            raise MalformedRow(row_no + 1, str(exc)) from None
    return records


def align_spans(
    message_tokens: Sequence[str],
    template_tokens: Sequence[str],
    label_set: LabelSet,
) -> list[tuple[int, int]]:
    """Assign each template token a half-open span of message positions.

    Words must match exactly one message word; every label covers a non-empty
    contiguous run and the spans tile the whole message.  Labels prefer the
    shortest run (i.e. the next word is matched at its leftmost occurrence),
    backtracking only when that choice leads to a dead end.
    """
    msg = list(message_tokens)
    tmpl = list(template_tokens)
    if not msg or not tmpl:
        raise AlignmentFailure(tmpl[0] if tmpl else "", 1)
    for tok in tmpl:
        if is_bracketed(tok) and tok not in label_set:
            raise UnknownLabel(tok)
    is_label = [tok in label_set for tok in tmpl]
    n, k = len(msg), len(tmpl)
    # suffix minimum of message words still needed by template[ti:]
    need = [0] * (k + 1)
    for ti in range(k - 1, -1, -1):
        need[ti] = need[ti + 1] + 1
    dead: set[tuple[int, int]] = set()
    worst = (0, 0)

    def solve(ti: int, cur: int):
        nonlocal worst
        if ti == k:
            return [] if cur == n else None
        if (ti, cur) in dead:
            return None
        if not is_label[ti]:
            if cur < n and msg[cur] == tmpl[ti]:
                rest = solve(ti + 1, cur + 1)
                if rest is not None:
                    return [(cur, cur + 1), *rest]
        else:
            last = n - need[ti + 1]
            ends = [n] if ti == k - 1 else range(cur + 1, last + 1)
            for end in ends:
                if end <= cur:
                    continue
                if ti + 1 < k and not is_label[ti + 1] and end < n and msg[end] != tmpl[ti + 1]:
                    continue
                rest = solve(ti + 1, end)
                if rest is not None:
                    return [(cur, end), *rest]
        dead.add((ti, cur))
        worst = max(worst, (ti, cur))
        return None

    spans = solve(0, 0)
    if spans is None:
        ti, cur = worst
        raise AlignmentFailure(tmpl[ti], cur + 1)
    return spans


def align_template(
    message_tokens: Sequence[str],
    template_tokens: Sequence[str],
    label_set: LabelSet,
) -> PointerTarget:
    spans = align_spans(message_tokens, template_tokens, label_set)
    m, n = label_set.m, len(message_tokens)
    out = []
    for tok, (start, _) in zip(template_tokens, spans):
        out.append(label_set.index(tok) if tok in label_set else m + start + 1)
    out.append(m + n + 1)
    return tuple(out)


def validate_target(target: Sequence[int], m: int, n: int) -> None:
    eos = m + n + 1
    if not target or target[-1] != eos:
        raise IndexOutOfRange(f"target must end with EOS index {eos}")
    for i in target:
        if not 1 <= i <= eos:
            raise IndexOutOfRange(f"pointer index {i} outside [1, {eos}]")
    if eos in target[:-1]:
        raise IndexOutOfRange("EOS may only appear as the last index")


def apply_target(
    message_tokens: Sequence[str],
    target: Sequence[int],
    label_set: LabelSet,
) -> list[str]:
    m, n = label_set.m, len(message_tokens)
    out = []
    for i in target:
        if i == m + n + 1:
            break
        if 1 <= i <= m:
            out.append(label_set.labels[i - 1])
        elif m < i <= m + n:
            out.append(message_tokens[i - m - 1])
        else:
            raise IndexOutOfRange(f"pointer index {i} outside [1, {m + n + 1}]")
    return out


def annotate(
    raw: Iterable[RawLogRecord], label_set: LabelSet
) -> tuple[list[AnnotatedRecord], list[int]]:
    """Tokenize and align every record; returns records and the line_ids that failed to align."""
    records, failures = [], []
    for rec in raw:
        tokens = tuple(pre_tokenize(rec.content))
        template = tuple(rec.ground_truth_template.split())
        try:
            target = align_template(tokens, template, label_set) if template else None
        except AlignmentFailure:
            target = None
        if target is None:
            failures.append(rec.line_id)
        records.append(AnnotatedRecord(rec.line_id, tokens, template, target))
    return records, failures


class SplitMix64:
    """64-bit SplitMix generator; the split permutation depends only on the seed."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)


def shuffled(items: Sequence, seed: int) -> list:
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def _share(n: int, frac: float) -> int:
    return int(n * frac + 0.5)


def split_dataset(records: Sequence[AnnotatedRecord], seed: int) -> DatasetSplit:
    """Seeded 20/20/60 train/validation/test split."""
    n = len(records)
    if n < 5:
        raise TooFewRecords(f"need at least 5 records to split, got {n}")
    order = shuffled(records, seed)
    n_train = n_val = _share(n, 0.2)
    return DatasetSplit(
        order[:n_train],
        order[n_train:n_train + n_val],
        order[n_train + n_val:],
        seed,
    )


def write_jsonl(records: Iterable[AnnotatedRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[AnnotatedRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AnnotatedRecord.from_json(json.loads(line)) for line in fh if line.strip()]
