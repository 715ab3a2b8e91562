"""Value-of-information analysis for a transport health impact model.

Subpackages are imported on demand; the command-line entry point is
:func:`voi.cli.main`.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"
