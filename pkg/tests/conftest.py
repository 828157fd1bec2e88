import numpy as np
import pytest

from logptr import synth
from logptr.ingest import LabelSet, annotate, load_structured_csv
from logptr.model import ModelConfig, PointerParser
from logptr.tokenizer import train_vocab

GENERAL = LabelSet.general()
VARIABLE_AWARE = LabelSet.variable_aware()


def make_parser(messages, label_set=GENERAL, embed_dim=8, hidden=8, dropout=0.0, seed=0, vocab_size=200):
    vocab = train_vocab([w for m in messages for w in m], vocab_size)
    cfg = ModelConfig(embed_dim=embed_dim, hidden=hidden, dropout=dropout, m=label_set.m, vocab_size=vocab.size)
    return PointerParser(cfg, vocab, label_set, seed=seed)


def synthetic_records(tmp_path, n_templates=20, n_lines=200, seed=0, label_set=GENERAL, name="syn.csv"):
    path = synth.generate(n_templates, n_lines, seed).write(tmp_path / name)
    records, failures = annotate(load_structured_csv(path, label_set), label_set)
    assert not failures
    return records


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
