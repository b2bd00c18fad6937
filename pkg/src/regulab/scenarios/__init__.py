"""Bundled scenario files, addressable by name from the CLI."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__all__ = ["available", "path", "resolve"]


def _root():
    return resources.files(__name__)


def available() -> list[str]:
    return sorted(p.name[:-5] for p in _root().iterdir() if p.name.endswith(".json"))


def path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``name`` with or without ``.json``)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in available():
        raise KeyError(f"no bundled scenario named {name!r}")
    return Path(str(_root() / f"{stem}.json"))


def resolve(name_or_path: str) -> Path:
    """An existing file wins; otherwise fall back to a bundled scenario name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    try:
        return path(name_or_path)
    except KeyError:
        return p
