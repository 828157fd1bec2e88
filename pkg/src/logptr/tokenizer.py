"""WordPiece-style subword vocabulary.

Training grows the vocabulary by merging the most frequent adjacent piece
pair (BPE-style); encoding is greedy longest-match-first.  Continuation
pieces carry the ``##`` prefix.
"""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable

from .errors import TargetTooSmall

PAD, UNK, BOS = "[PAD]", "[UNK]", "[BOS]"
RESERVED = (PAD, UNK, BOS)
PAD_ID, UNK_ID, BOS_ID = 0, 1, 2
CONT = "##"
DEFAULT_VOCAB_SIZE = 8000


class SubwordVocab:
    def __init__(self, pieces: Iterable[str]):
        self.pieces = tuple(pieces)
        if self.pieces[:3] != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        self.ids = {p: i for i, p in enumerate(self.pieces)}
        if len(self.ids) != len(self.pieces):
            raise ValueError("duplicate vocabulary pieces")
        self._max_len = max((len(p) for p in self.pieces), default=1)

    def __len__(self) -> int:
        return len(self.pieces)

    def __eq__(self, other) -> bool:
        return isinstance(other, SubwordVocab) and self.pieces == other.pieces

    @property
    def size(self) -> int:
        return len(self.pieces)

    def encode_word(self, word: str) -> list[int]:
        if not word:
            raise ValueError("cannot encode an empty word")
        out = []
        pos = 0
        while pos < len(word):
            prefix = CONT if pos else ""
            for end in range(min(len(word), pos + self._max_len), pos, -1):
                pid = self.ids.get(prefix + word[pos:end])
                if pid is not None:
                    out.append(pid)
                    pos = end
                    break
            else:
                return [UNK_ID]
        return out

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.pieces[i].removeprefix(CONT) for i in ids)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.pieces).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.pieces) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line for line in text.split("\n") if line)


def _merge(a: str, b: str) -> str:
    return a + b[len(CONT):]


def train_vocab(words: Iterable[str], target_size: int = DEFAULT_VOCAB_SIZE) -> SubwordVocab:
    counts = Counter(w for w in words if w)
    alphabet = sorted({ch for w in counts for ch in w})
    base = [*RESERVED, *alphabet, *(CONT + ch for ch in alphabet)]
    if target_size < len(base):
        raise TargetTooSmall(f"target_size {target_size} < {len(base)} (reserved ids + alphabet)")
    pieces = list(base)
    known = set(pieces)

    words_list = sorted(counts)
    freq = [counts[w] for w in words_list]
    segs = [[w[0], *(CONT + ch for ch in w[1:])] for w in words_list]

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, seg in enumerate(segs):
        for pair in zip(seg, seg[1:]):
            pair_counts[pair] += freq[wi]
            where[pair].add(wi)

    while len(pieces) < target_size and pair_counts:
        best, best_count = None, 1
        for pair, c in pair_counts.items():
            if c > best_count or (c == best_count and best is not None and _merge(*pair) < _merge(*best)):
                best, best_count = pair, c
        if best is None:
            break
        merged = _merge(*best)
        if merged not in known:
            known.add(merged)
            pieces.append(merged)
        for wi in sorted(where.pop(best, ())):
            seg = segs[wi]
            for pair in zip(seg, seg[1:]):
                pair_counts[pair] -= freq[wi]
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                if pair != best:
                    where[pair].discard(wi)
            new, i = [], 0
            while i < len(seg):
                if i + 1 < len(seg) and (seg[i], seg[i + 1]) == best:
                    new.append(merged)
                    i += 2
                else:
                    new.append(seg[i])
                    i += 1
            segs[wi] = new
            for pair in zip(new, new[1:]):
                pair_counts[pair] += freq[wi]
                where[pair].add(wi)
    return SubwordVocab(pieces)
