"""Group Accuracy, Parsing Accuracy and cross-dataset robustness."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCorpus, TooFewDatasets
from .ingest import GENERAL, GENERAL_LABEL, PLACEHOLDER, is_bracketed


@dataclass(frozen=True)
class ParsedMessage:
    line_id: int
    predicted: tuple[str, ...]
    gold: tuple[str, ...]


ParsedCorpus = Sequence[ParsedMessage]


def make_corpus(items: Iterable[tuple[int, Sequence[str], Sequence[str]]]) -> list[ParsedMessage]:
    return [ParsedMessage(int(i), tuple(p), tuple(g)) for i, p, g in items]


def _is_label(tok: str, labels) -> bool:
    return tok in labels if labels is not None else is_bracketed(tok)


def _group_key(tokens: Sequence[str], labels) -> str:
    return " ".join(PLACEHOLDER if _is_label(t, labels) else t for t in tokens)


def group_accuracy(corpus: ParsedCorpus, labels: Iterable[str] | None = None) -> float:
    """Fraction of messages whose predicted group equals their gold group.

    Templates are compared with every variable label rewritten to ``<*>``, so
    the metric ignores categories.  ``labels`` defaults to "any bracketed
    token".
    """
    if not corpus:
        raise EmptyCorpus("group_accuracy on an empty corpus")
    labels = None if labels is None else set(labels)
    pred_groups: dict[str, set[int]] = defaultdict(set)
    gold_groups: dict[str, set[int]] = defaultdict(set)
    keys = []
    for msg in corpus:
        pk, gk = _group_key(msg.predicted, labels), _group_key(msg.gold, labels)
        pred_groups[pk].add(msg.line_id)
        gold_groups[gk].add(msg.line_id)
        keys.append((pk, gk))
    correct = sum(pred_groups[pk] == gold_groups[gk] for pk, gk in keys)
    return correct / len(corpus)


def collapse_labels(tokens: Sequence[str], labels=None, var: str = GENERAL_LABEL) -> tuple[str, ...]:
    return tuple(var if _is_label(t, labels) else t for t in tokens)


def parsing_accuracy(corpus: ParsedCorpus, mode: str = GENERAL, labels: Iterable[str] | None = None) -> float:
    """Fraction of messages whose predicted template equals the gold one token for token.

    In general mode category labels are first collapsed to ``[VAR]``.
    """
    if not corpus:
        raise EmptyCorpus("parsing_accuracy on an empty corpus")
    labels = None if labels is None else set(labels)
    if mode == GENERAL:
        correct = sum(collapse_labels(m.predicted, labels) == collapse_labels(m.gold, labels) for m in corpus)
    else:
        correct = sum(tuple(m.predicted) == tuple(m.gold) for m in corpus)
    return correct / len(corpus)


def category_confusion(corpus: ParsedCorpus, labels: Iterable[str] | None = None) -> dict:
    """Messages whose variables sit in the right places but carry a wrong category.

    Returns the number of such messages and a count per (gold, predicted)
    label pair over their mislabelled positions.
    """
    labels = None if labels is None else set(labels)
    pairs: Counter = Counter()
    messages = 0
    for m in corpus:
        if tuple(m.predicted) == tuple(m.gold):
            continue
        if collapse_labels(m.predicted, labels) != collapse_labels(m.gold, labels):
            continue
        messages += 1
        for p, g in zip(m.predicted, m.gold):
            if p != g:
                pairs[(g, p)] += 1
    return {
        "messages": messages,
        "pairs": [{"gold": g, "predicted": p, "count": c} for (g, p), c in sorted(pairs.items())],
    }


def robustness_report(values: Sequence[float]) -> dict:
    """Mean and spread of per-dataset accuracies.

    ``std`` is the sample standard deviation (n - 1 denominator);
    ``population_std`` uses n.
    """
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise TooFewDatasets(f"need at least 2 datasets, got {len(vals)}")
    mean = math.fsum(vals) / len(vals)
    ss = math.fsum((v - mean) ** 2 for v in vals)
    return {
        "mean": mean,
        "std": math.sqrt(ss / (len(vals) - 1)),
        "population_std": math.sqrt(ss / len(vals)),
    }


def metrics_report(per_dataset: Mapping[str, Mapping[str, float]]) -> dict:
    """``{dataset: {ga, pa}, "aggregate": {mean_ga, mean_pa, std_pa}}``."""
    if not per_dataset:
        raise EmptyCorpus("no datasets to report")
    report: dict = {name: {"ga": float(v["ga"]), "pa": float(v["pa"])} for name, v in per_dataset.items()}
    gas = [v["ga"] for v in report.values()]
    pas = [v["pa"] for v in report.values()]
    agg = {"mean_ga": math.fsum(gas) / len(gas), "mean_pa": math.fsum(pas) / len(pas), "std_pa": None}
    if len(pas) >= 2:
        rob = robustness_report(pas)
        agg["std_pa"] = rob["std"]
        agg["population_std_pa"] = rob["population_std"]
    report["aggregate"] = agg
    return report
