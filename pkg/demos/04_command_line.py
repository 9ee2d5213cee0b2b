"""
Command-line workflow
=====================

generate -> fit -> summarize with a tiny configuration, written to a
temporary directory. The same calls work from a shell as `rpareto ...`.
"""

import json
import tempfile
from pathlib import Path

from rpareto import cli

config = {
    "geometry": {"side_counts": [5, 5], "coarse": 3},
    "data": {"m": 20, "seed": 5},
    "inference": {"n_mcmc": 300, "burn_in": 100, "n_init": 100, "n_max": 2000,
                  "n_condgauss": 500},
}

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    (out / "config.json").write_text(json.dumps(config))
    cfg = ["--config", str(out / "config.json")]
    cli.main(["generate", *cfg, "--out", str(out / "data")])
    cli.main(["fit", *cfg, "--data", str(out / "data" / "dataset.csv"), "--out", str(out / "fit")])
    cli.main(["summarize", str(out / "fit" / "chain.csv"), "--burn-in", "100"])
    print((out / "fit" / "chain.csv").read_text().splitlines()[0])
