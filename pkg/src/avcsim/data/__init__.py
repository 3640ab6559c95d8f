"""Bundled cases and profile bundles."""

from pathlib import Path

_ROOT = Path(__file__).parent


def case_path(name: str) -> Path:
    """Path of a bundled case document, e.g. ``case33`` or ``case141``."""
    path = _ROOT / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled case '{name}'")
    return path


def bundle_path(name: str) -> Path:
    """Path of a bundled profile directory, e.g. ``profiles33``."""
    path = _ROOT / name
    if not path.is_dir():
        raise FileNotFoundError(f"no bundled profile set '{name}'")
    return path
