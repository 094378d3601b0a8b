"""Backend dispatch for the numeric hot paths.

Two interchangeable implementations exist: numba-jitted loops
(``_kernels_numba``) and pure numpy (``_kernels_numpy``). The active one
is chosen once at import time from the ``SILHLIFT_BACKEND`` environment
variable ("numba" or "numpy"). Unset, numba is used when it imports
cleanly and ``NUMBA_DISABLE_JIT`` is not set, otherwise numpy.

``benchmarks/bench_backends.py`` times the two side by side.
"""

import os

from . import _kernels_numpy

_requested = os.environ.get("SILHLIFT_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        "SILHLIFT_BACKEND must be 'numba' or 'numpy', got %r" % _requested)

_impl = None
if _requested in ("", "numba") and "NUMBA_DISABLE_JIT" not in os.environ:
    try:
        from . import _kernels_numba as _impl
    except ImportError:
        if _requested == "numba":
            raise
        _impl = None
if _impl is None:
    _impl = _kernels_numpy

BACKEND = "numba" if _impl is not _kernels_numpy else "numpy"


def backend_name():
    return BACKEND


rasterize_triangles = _impl.rasterize_triangles
ray_mesh_first_hit = _impl.ray_mesh_first_hit
dda_ray_argmin = _impl.dda_ray_argmin
point_mesh_sqdist_brute = _impl.point_mesh_sqdist_brute
point_mesh_sqdist_grid = _impl.point_mesh_sqdist_grid
cone_field_values = _impl.cone_field_values
