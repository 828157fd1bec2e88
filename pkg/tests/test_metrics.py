import math
import random

import pytest

from logptr.errors import EmptyCorpus, TooFewDatasets
from logptr.ingest import DEFAULT_CATEGORY_LABELS, VARIABLE_AWARE
from logptr.metrics import (
    ParsedMessage,
    category_confusion,
    group_accuracy,
    make_corpus,
    metrics_report,
    parsing_accuracy,
    robustness_report,
)

# published per-dataset PA in variable-aware mode, parser and baseline
TABLE_PA = [0.943, 1, 0.959, 0.968, 0.998, 0.971, 0.992, 0.961, 0.866, 0.994, 0.998, 1, 0.997, 0.925, 0.983, 0.989]
BASELINE_PA = [0.916, 0.993, 0.896, 0.968, 0.965, 0.988, 0.99, 0.959, 0.862, 0.976, 0.932, 1, 0.991, 0.878, 0.99, 0.981]


def corpus(pairs):
    return make_corpus((i + 1, p.split(), g.split()) for i, (p, g) in enumerate(pairs))


def pairwise_ga(c):
    """O(N^2) oracle: a message is right iff it agrees with every other message on same-group-ness."""
    def key(toks):
        return tuple("<*>" if t.startswith("[") and t.endswith("]") else t for t in toks)

    ok = 0
    for a in c:
        ok += all((key(a.predicted) == key(b.predicted)) == (key(a.gold) == key(b.gold)) for b in c)
    return ok / len(c)


def test_ga_examples():
    assert group_accuracy(corpus([("a [VAR]", "a [VAR]"), ("b", "b")])) == 1.0
    # predicted merges two gold groups
    assert group_accuracy(corpus([("x [VAR]", "x 1"), ("x [VAR]", "x 2")])) == 0.0
    # every predicted group straddles two gold groups
    c = corpus([("a [VAR]", "a [VAR]"), ("a [VAR]", "b [VAR]"), ("c", "a [VAR]")])
    assert group_accuracy(c) == 0.0
    c = corpus([("a [VAR]", "a [VAR]"), ("b", "b [VAR]")])
    assert group_accuracy(c) == 1.0
    c = corpus([("a [VAR]", "a [VAR]"), ("a [VAR]", "a [VAR]"), ("a b", "a [VAR]"), ("z", "z")])
    assert group_accuracy(c) == 0.25


def test_ga_ignores_categories():
    c = corpus([("open [LOI]", "open [OID]"), ("open [TDA]", "open [OID]")])
    assert group_accuracy(c) == 1.0


def test_pa_examples():
    c = corpus([("a [VAR]", "a [VAR]"), ("b [VAR] [VAR]", "b [VAR]")])
    assert parsing_accuracy(c) == 0.5
    assert parsing_accuracy(corpus([("x [LOI]", "x [OID]")])) == 1.0
    assert parsing_accuracy(corpus([("x [LOI]", "x [OID]")]), VARIABLE_AWARE) == 0.0
    with pytest.raises(EmptyCorpus):
        parsing_accuracy([])
    with pytest.raises(EmptyCorpus):
        group_accuracy([])


def _random_corpus(rng):
    vocab = ["a", "b", "[VAR]", "[LOI]"]
    n = rng.randint(1, 12)
    gold_pool = [" ".join(rng.choices(vocab, k=rng.randint(1, 3))) for _ in range(rng.randint(1, 4))]
    pred_pool = gold_pool + [" ".join(rng.choices(vocab, k=rng.randint(1, 3))) for _ in range(2)]
    return corpus([(rng.choice(pred_pool), rng.choice(gold_pool)) for _ in range(n)])


def test_ga_matches_pairwise_oracle_and_invariants():
    rng = random.Random(0)
    for _ in range(1000):
        c = _random_corpus(rng)
        ga = group_accuracy(c)
        assert ga == pytest.approx(pairwise_ga(c), abs=1e-12)
        assert 0 <= ga <= 1
        shuffled = make_corpus((m.line_id, m.predicted, m.gold) for m in rng.sample(c, len(c)))
        assert group_accuracy(shuffled) == ga
        pa = parsing_accuracy(c)
        assert parsing_accuracy(shuffled) == pa
        if pa == 1.0:
            assert ga == 1.0


def test_category_confusion():
    c = corpus([("x [LOI] [TDA]", "x [OID] [TDA]"), ("y [OID]", "y [OID]"), ("z [LOI]", "z w")])
    rep = category_confusion(c, DEFAULT_CATEGORY_LABELS)
    assert rep == {"messages": 1, "pairs": [{"gold": "[OID]", "predicted": "[LOI]", "count": 1}]}


def test_robustness_trivial():
    assert robustness_report([1.0, 1.0]) == {"mean": 1.0, "std": 0.0, "population_std": 0.0}
    rep = robustness_report([0.9, 1.1])
    assert rep["mean"] == pytest.approx(1.0)
    assert rep["population_std"] == pytest.approx(0.1)
    assert rep["std"] == pytest.approx(0.1 * math.sqrt(2))
    with pytest.raises(TooFewDatasets):
        robustness_report([0.5])


def test_robustness_published_table():
    rep = robustness_report(TABLE_PA)
    assert rep["mean"] == pytest.approx(0.972, abs=5e-4)
    assert abs(rep["std"] - 0.036) <= 5e-4
    assert abs(robustness_report(BASELINE_PA)["std"] - 0.045) <= 5e-4
    assert abs(robustness_report(BASELINE_PA)["mean"] - 0.955) <= 5e-4


def test_metrics_report_shape():
    rep = metrics_report({"A": {"ga": 1.0, "pa": 0.9}, "B": {"ga": 0.5, "pa": 1.1}})
    agg = rep["aggregate"]
    assert agg["mean_ga"] == 0.75 and agg["mean_pa"] == pytest.approx(1.0)
    assert agg["population_std_pa"] == pytest.approx(0.1)
    single = metrics_report({"A": {"ga": 1.0, "pa": 1.0}})
    assert single["aggregate"]["std_pa"] is None
    assert isinstance(ParsedMessage(1, ("a",), ("a",)).predicted, tuple)
