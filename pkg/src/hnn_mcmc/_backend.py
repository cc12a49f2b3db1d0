"""Selects the compiled core when it is importable.

Set ``HNN_MCMC_PURE_PYTHON=1`` to force the pure-Python implementation.
"""
import os

core = None
if os.environ.get("HNN_MCMC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as core
    except ImportError:  # extension not built
        core = None

HAVE_COMPILED = core is not None


def available():
    return "compiled" if HAVE_COMPILED else "python"
