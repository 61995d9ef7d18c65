"""Regenerate the golden fixtures in tests/golden from the built-in configurations.

Run only after the oracle tests pass; the fixtures pin the pipeline output
byte for byte and carry the config hash in their file names.
"""

import shutil
import sys
import tempfile
from pathlib import Path

from nestedbec.cli import main
from nestedbec.config import RunConfig

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"
CONFIGS = Path(__file__).resolve().parents[1] / "src" / "nestedbec" / "configs"


def run(*args):
    code = main(list(args))
    if code != 0:
        sys.exit(f"command {args} failed with exit code {code}")


def regenerate():
    GOLDEN.mkdir(exist_ok=True)
    ref = RunConfig.builtin("reference")
    empty = RunConfig.builtin("empty_cavity")
    with tempfile.TemporaryDirectory() as tmp:
        run("rates", "--out", tmp)
        shutil.copy(Path(tmp) / "rates.json", GOLDEN / f"rates_{ref.hash}.json")
        run("scan", "--out", tmp)
        shutil.copy(Path(tmp) / "scan.json", GOLDEN / f"scan_{ref.hash}.json")
        run("evolve", "--config", str(CONFIGS / "empty_cavity.toml"), "--out", tmp)
        shutil.copy(Path(tmp) / "trajectory.csv", GOLDEN / f"trajectory_{empty.hash}.csv")
    for p in sorted(GOLDEN.iterdir()):
        print(p.name)


if __name__ == "__main__":
    regenerate()
