"""Bundled scenario fixtures."""

from importlib import resources
from pathlib import Path


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled scenario file."""
    return Path(str(resources.files(__package__).joinpath(name)))
