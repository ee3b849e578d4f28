"""Regenerate ``src/mcflow/baselines.json`` from the seeded random suite.

Usage: python3 scripts/measure_baselines.py
"""
import json
from pathlib import Path

from mcflow.diagnostics import measure_baselines

if __name__ == "__main__":
    data = measure_baselines()
    path = Path(__file__).resolve().parents[1] / "src" / "mcflow" / "baselines.json"
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    print(json.dumps(data, sort_keys=True, indent=2))
