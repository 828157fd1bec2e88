"""
Running the benchmark pipeline on synthetic logs
================================================

``logptr benchmark`` prepares, trains and evaluates every dataset in a
folder and reports GA and PA per dataset plus their mean and spread.  Real
runs point it at the LogHub 2k files; here two synthetic datasets in the same
CSV layout stand in, with a short training budget and smaller batches.
"""

import json
import tempfile
from pathlib import Path

from logptr import cli, synth

work = Path(tempfile.mkdtemp(prefix="logptr-demo-"))
for name, seed in (("Alpha", 0), ("Beta", 1)):
    synth.generate(n_templates=15, n_lines=400, seed=seed).write(work / "logs" / name / f"{name}_2k.log_structured.csv")

print(open(work / "logs" / "Alpha" / "Alpha_2k.log_structured.csv").read().splitlines()[1])

code = cli.main([
    "benchmark", "--datasets", str(work / "logs"), "--out", str(work / "out" / "table.json"),
    "--epochs", "20", "--batch-size", "8",
])
assert code == 0
table = json.loads((work / "out" / "table.json").read_text())
for name, row in table.items():
    print(name, {k: (round(v, 3) if isinstance(v, float) else v) for k, v in row.items() if k != "category_confusion"})
print("artifacts under", work / "out")
