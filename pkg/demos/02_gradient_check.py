"""
Checking the hand-written gradients
===================================

Every primitive in ``logptr.numcore`` carries its own backward rule.  The
check below perturbs each parameter entry of a small parser by a central
difference in float64 and compares with the analytic gradient.
"""

import time

from logptr import LabelSet, align_template
from logptr.model import ModelConfig, PointerParser
from logptr.numcore import grad_check
from logptr.tokenizer import train_vocab

labels = LabelSet.general()
msg = ["open", "file", "42"]
target = align_template(msg, ["open", "file", "[VAR]"], labels)

vocab = train_vocab(msg, 50)
parser = PointerParser(ModelConfig(embed_dim=8, hidden=8, m=1, vocab_size=vocab.size), vocab, labels, seed=0)

start = time.perf_counter()
report = grad_check(lambda: parser.loss([msg], [target]), parser.parameters())
print(f"checked {len(report.per_param)} tensors in {time.perf_counter() - start:.1f} s")
for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1]):
    print(f"  {name:18s} {err:.2e}")
print("passed" if report.passed else "FAILED", f"(tolerance {report.tol:g})")
