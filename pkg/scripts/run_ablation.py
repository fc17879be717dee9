"""Train every variant at every seed and write the ablation table.

Usage: python3 scripts/run_ablation.py [config.json] [out_dir]
"""
import sys
from pathlib import Path

from freqstream.cli import main

HERE = Path(__file__).parent

if __name__ == "__main__":
    config = sys.argv[1] if len(sys.argv) > 1 else str(HERE / "configs" / "default.json")
    argv = ["ablate", "--config", config]
    if len(sys.argv) > 2:
        argv += ["--out", sys.argv[2]]
    sys.exit(main(argv))
