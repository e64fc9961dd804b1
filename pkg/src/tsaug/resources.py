"""Locations of packaged data files."""

from __future__ import annotations

from pathlib import Path


def resolve_paths() -> tuple[Path, Path]:
    """Return ``(package_dir, data_dir)`` for the installed package."""
    package_dir = Path(__file__).resolve().parent
    return package_dir, package_dir / "data"


def data_dir() -> Path:
    return resolve_paths()[1]
