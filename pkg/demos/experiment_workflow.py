"""
From a config file to report tables
===================================

The runner writes one JSON-lines trace per replication; reports are CSV
files computed from traces alone, so they can be rebuilt at any time.
The same steps are available as ``qdnas run``, ``qdnas oracle`` and
``qdnas report``.
"""

import json
import tempfile
from pathlib import Path

from qdnas import cli

work = Path(tempfile.mkdtemp(prefix="qdnas-"))
base = {
    "problem": {"name": "toy_cell"},
    "niches": {"percentiles": [25, 50, 75]},
    "replications": 3,
    "seed": 0,
}
configs = {
    "random_search": {"optimizer": "random_search", "budget": {"full_evaluations": 20}},
    "qd_hyperband": {"optimizer": "qd_hyperband", "budget": {"fidelity_units": 540}},
    "mo_hyperband": {"optimizer": "mo_hyperband", "budget": {"fidelity_units": 540}},
}

for name, extra in configs.items():
    path = work / f"{name}.json"
    path.write_text(json.dumps({**base, **extra}, indent=1))
    cli.main(["run", "--config", str(path), "--out-dir", str(work / "traces")])

cli.main(["oracle", "--config", str(work / "random_search.json"), "--out-dir", str(work)])
cli.main(["report", str(work / "traces"), "--out-dir", str(work / "reports"), "--grid-points", "10"])

print((work / "reports" / "final_ranks.csv").read_text())
print((work / "reports" / "ert_ratios.csv").read_text())
print("oracle:", [n["objective"] for n in json.loads((work / "oracle.json").read_text())["niches"]])
