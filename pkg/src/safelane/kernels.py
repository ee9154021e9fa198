"""Hot-loop kernels, compiled when available.

The Cython extension ``safelane._ckernels`` is used if it was built; otherwise
the pure-Python twin in ``safelane._kernels_py`` is loaded. Set
``SAFELANE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SAFELANE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
NO_TARGET = _impl.NO_TARGET
occupancy = _impl.occupancy
neighbor_table = _impl.neighbor_table
idm_batch = _impl.idm_batch
advance_world = _impl.advance_world
sumtree_set = _impl.sumtree_set
sumtree_find = _impl.sumtree_find
project_categorical = _impl.project_categorical

__all__ = [
    "BACKEND", "NO_TARGET", "occupancy", "neighbor_table", "idm_batch", "advance_world",
    "sumtree_set", "sumtree_find", "project_categorical",
]
