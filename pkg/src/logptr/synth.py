"""Synthetic structured-log datasets in the LogHub CSV layout.

Templates are sequences of pseudo-words with variable slots; every slot has
one of the ten categories and a value generator whose surface form is
typical for that category.  Files carry category labels in EventTemplate,
so they load in variable-aware mode directly and collapse to ``[VAR]`` in
general mode.
"""

from __future__ import annotations

import csv
import io
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_CATEGORY_LABELS

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "st", "tr", "pl", "gr", "ch", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ea", "io", "ou"]
_CODAS = ["", "", "n", "r", "s", "t", "l", "nd", "ck", "ng"]
_TYPES = ["INFO", "WARN", "DEBUG", "TCP", "UDP", "GET", "POST", "PUT", "READ", "WRITE"]
_SWITCHES = ["true", "false", "on", "off", "enabled", "disabled", "yes", "no"]


def _num(rng, lo, hi) -> str:
    return str(int(rng.integers(lo, hi)))


def _hex(rng, n) -> str:
    return "".join(rng.choice(list("0123456789abcdef"), n))


def _word(rng) -> str:
    syl = int(rng.integers(1, 4))
    return "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(syl))


def _oid(rng):
    kind = int(rng.integers(4))
    if kind == 0:
        return f"blk_{'-' if rng.random() < 0.5 else ''}{_num(rng, 10**9, 10**12)}{_num(rng, 10**6, 10**7)}"
    if kind == 1:
        return f"job_{_num(rng, 20150101, 20231231)}_{_num(rng, 1000, 9999)}"
    if kind == 2:
        return "0x" + _hex(rng, 8)
    return f"task_{_num(rng, 100000, 999999)}"


def _loi(rng):
    ip = ".".join(_num(rng, 1, 255) for _ in range(4))
    kind = int(rng.integers(4))
    if kind == 0:
        return ip
    if kind == 1:
        return f"{ip}:{_num(rng, 1024, 65535)}"
    if kind == 2:
        return "/" + "/".join(_word(rng) for _ in range(int(rng.integers(1, 4)))) + rng.choice([".log", ".dat", "/", ".conf"])
    return f"http://{_word(rng)}.{rng.choice(['com', 'org', 'net'])}/{_word(rng)}"


def _obn(rng):
    if rng.random() < 0.5:
        return f"{rng.choice(['org', 'com'])}.{_word(rng)}.{_word(rng).capitalize()}{rng.choice(['Service', 'Handler', 'Manager'])}"
    return f"{_word(rng)}@{_word(rng)}.com"


def _tda(rng):
    kind = int(rng.integers(4))
    if kind == 0:
        return f"{_num(rng, 1, 5000)}ms"
    if kind == 1:
        return f"{_num(rng, 0, 60)}.{_num(rng, 100, 999)}s"
    if kind == 2:
        return f"{_num(rng, 10, 24)}:{_num(rng, 10, 60)}:{_num(rng, 10, 60)}"
    return f"20{_num(rng, 10, 24)}-{_num(rng, 10, 13)}-{_num(rng, 10, 29)}"


def _crs(rng):
    kind = int(rng.integers(3))
    if kind == 0:
        return f"{_num(rng, 1, 4096)}{rng.choice(['MB', 'GB', 'KB'])}"
    if kind == 1:
        return f"{_num(rng, 0, 100)}%"
    return f"cpu{_num(rng, 0, 64)}"


def _stc(rng):
    if rng.random() < 0.5:
        return f"E{_num(rng, 1000, 9999)}"
    return "ERR_" + "".join(rng.choice(list(string.ascii_uppercase), int(rng.integers(3, 8))))


def _otp(rng):
    if rng.random() < 0.5:
        return f"v{_num(rng, 0, 10)}.{_num(rng, 0, 20)}.{_num(rng, 0, 50)}"
    return f"{_word(rng)}={_word(rng)}"


GENERATORS = {
    "[OID]": _oid,
    "[LOI]": _loi,
    "[OBN]": _obn,
    "[TID]": lambda rng: str(rng.choice(_TYPES)),
    "[SID]": lambda rng: str(rng.choice(_SWITCHES)),
    "[TDA]": _tda,
    "[CRS]": _crs,
    "[OBA]": lambda rng: _num(rng, 0, 100000),
    "[STC]": _stc,
    "[OTP]": _otp,
}


@dataclass
class SyntheticDataset:
    templates: list[list[str]]
    rows: list[tuple[int, str, str]]  # (LineId, Content, EventTemplate)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["LineId", "Content", "EventId", "EventTemplate"])
        tid = {" ".join(t): f"E{i + 1}" for i, t in enumerate(self.templates)}
        for line_id, content, template in self.rows:
            w.writerow([line_id, content, tid[template], template])
        return buf.getvalue()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


def make_templates(n_templates: int, rng: np.random.Generator, max_vars: int = 4) -> list[list[str]]:
    lexicon = sorted({_word(rng) for _ in range(max(200, n_templates * 3))} - set(_SWITCHES))
    labels = list(DEFAULT_CATEGORY_LABELS)
    seen, out = set(), []
    while len(out) < n_templates:
        n_static = int(rng.integers(2, 9))
        words = []
        for _ in range(n_static):
            w = str(rng.choice(lexicon))
            r = rng.random()
            if r < 0.15:
                w = w.capitalize()
            elif r < 0.25:
                w += rng.choice([":", ",", "="])
            words.append(w)
        for _ in range(int(rng.integers(0, max_vars + 1))):
            words.insert(int(rng.integers(1, len(words) + 1)), str(rng.choice(labels)))
        key = " ".join(words)
        if key not in seen:
            seen.add(key)
            out.append(words)
    return out


def fill(template: list[str], rng: np.random.Generator) -> str:
    return " ".join(GENERATORS[t](rng) if t in GENERATORS else t for t in template)


def generate(n_templates: int = 30, n_lines: int = 2000, seed: int = 0, max_vars: int = 4) -> SyntheticDataset:
    """``n_lines`` messages drawn from ``n_templates`` templates, each template used at least once."""
    rng = np.random.default_rng(seed)
    templates = make_templates(n_templates, rng, max_vars)
    picks = list(range(n_templates)) + list(rng.integers(0, n_templates, max(0, n_lines - n_templates)))
    picks = [picks[i] for i in rng.permutation(len(picks))][:n_lines]
    rows = [(i + 1, fill(templates[t], rng), " ".join(templates[t])) for i, t in enumerate(picks)]
    return SyntheticDataset(templates, rows)
