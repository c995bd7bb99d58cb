"""Bundled synthetic demo corpus with a scripted oracle that drives the full pipeline offline."""

from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

DEMO_FILES = ("problems.jsonl", "oracle_rules.json", "config.toml")


def export_demo(destination: str | Path) -> Path:
    """Copy the demo dataset, oracle ruleset, and config into a directory.

    Returns the destination path; run the pipeline from there with
    ``aupair -c config.toml <command>``.
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    package = resources.files(__name__)
    for name in DEMO_FILES:
        with resources.as_file(package / name) as src:
            shutil.copy(src, dest / name)
    return dest
