"""Drive the command-line harness and replay a run from its manifest.

Equivalent shell session::

    deepdvl simulate --config small.json --out out/sim
    deepdvl compare --config small.json --data out/sim --out out/cmp
    deepdvl compare --config out/cmp/manifest.json --out out/cmp2
"""

import json
import tempfile
from pathlib import Path

from deepdvl import cli

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    cfg = root / "small.json"
    cfg.write_text(json.dumps({"duration_s": 120.0, "measurement": "ls", "seeds": [1]}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == 0
    assert cli.main(["compare", "--config", str(cfg), "--data", str(root / "sim"), "--out", str(root / "cmp")]) == 0
    assert cli.main(["compare", "--config", str(root / "cmp" / "manifest.json"), "--out", str(root / "cmp2")]) == 0
    first = json.loads((root / "cmp" / "manifest.json").read_text())["files"]
    second = json.loads((root / "cmp2" / "manifest.json").read_text())["files"]
    print("\nreplayed outputs identical:", first == second)
