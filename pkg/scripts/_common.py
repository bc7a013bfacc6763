"""Shared helpers for the experiment scripts."""

from __future__ import annotations

import json
import platform
import subprocess
from pathlib import Path

import numpy as np

RESULTS = Path(__file__).resolve().parents[1] / "results"


def provenance() -> dict:
    try:
        commit = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                                cwd=RESULTS.parent).stdout.strip() or None
    except OSError:
        commit = None
    return {"python": platform.python_version(), "numpy": np.__version__, "commit": commit}


def write_json(name: str, doc: dict) -> Path:
    RESULTS.mkdir(exist_ok=True)
    path = RESULTS / name
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
