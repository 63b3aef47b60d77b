"""Bundled example models and contour fixtures."""

from importlib import resources
from pathlib import Path


def _data_dir() -> Path:
    return Path(resources.files(__package__))


def fig6_path() -> Path:
    """Three-branch demo tree: trunk plus two children with distinct stiffness."""
    return _data_dir() / "fig6.json"


def contour_path(name: str) -> Path:
    """Path of a bundled 64x64 contour fixture (PGM)."""
    return _data_dir() / "contours" / f"{name}.pgm"


def keypoints_path(name: str) -> Path:
    return _data_dir() / "contours" / f"{name}_keypoints.csv"
