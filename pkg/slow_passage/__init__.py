import os
from importlib import metadata
from pathlib import Path

import decouple as dc
import toml

_PYPROJECT = Path(__file__).resolve().parent.parent / "pyproject.toml"


def get_version() -> str:
    """Project version, read from pyproject.toml in a checkout or from the installed metadata."""
    if _PYPROJECT.is_file():
        pyproject_data = toml.load(_PYPROJECT)
        return str(pyproject_data["project"]["version"])
    try:
        return metadata.version("slow-passage")
    except metadata.PackageNotFoundError:
        return "0.0.0"


# Read configuration with safe defaults
threads: int = dc.config("SLOW_PASSAGE_THREADS", default=0, cast=int)
log_level: str = dc.config("SLOW_PASSAGE_LOG_LEVEL", default="WARNING")

# 0 means "pick for me"; results never depend on this value
if threads <= 0:
    threads = min(8, os.cpu_count() or 1)

__version__ = get_version()
