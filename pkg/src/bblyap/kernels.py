"""Selects the falsifier back end at import.

The compiled kernel is used when it was built; setting
``BBLYAP_PURE_PYTHON=1`` forces the Python twin.
"""
import os

from . import _falsify_py

falsify_quadratic_py = _falsify_py.falsify_quadratic

try:
    if os.environ.get("BBLYAP_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from ._falsify import falsify_quadratic as falsify_quadratic_ext
except ImportError:
    falsify_quadratic_ext = None

falsify_quadratic = falsify_quadratic_ext or falsify_quadratic_py
BACKEND = "cython" if falsify_quadratic_ext is not None else "python"

UNSAT = _falsify_py.UNSAT
FALSIFIED = _falsify_py.FALSIFIED
UNKNOWN = _falsify_py.UNKNOWN
