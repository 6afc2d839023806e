"""Bundled example data."""

from importlib import resources
from pathlib import Path


def miniature_dir() -> Path:
    """Directory holding the miniature dataset: 2 problems x 2 instances x 4 variants per family."""
    return Path(resources.files("hgperf") / "data" / "mini")


def miniature_paths() -> dict:
    d = miniature_dir()
    return {"ela": d / "ela.csv", "configs": d / "configs.csv", "performance": d / "performance.csv"}
