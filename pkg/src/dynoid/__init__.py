"""Neural state-space identification from input/output windows.

Submodules are imported on first attribute access so that ``dynoid.cli``
can set thread limits before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("nn", "systems", "datagen", "regressor", "reduction", "diagnostics", "config", "cli", "errors")


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = list(_SUBMODULES)
