"""Hot-loop dispatch: compiled kernels when built, numpy fallback otherwise.

The backend is picked once at import. ``set_backend`` switches it at runtime,
which is how the tests and the benchmark compare the two.
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = "cython" if _compiled is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    previous, _active = _active, name
    return previous


def splat_nearest(u, v, z, height, width):
    """Z-buffered point splat.

    Each source point k lands on integer pixel (u[k], v[k]); out-of-bounds
    points are skipped. Per pixel the smallest z wins, equal z goes to the
    smaller k. Returns ``(zbuf, index)`` with 0 / -1 where nothing landed.
    """
    impl = _BACKENDS[_active]
    return impl.splat_nearest(
        np.ascontiguousarray(u, dtype=np.int64),
        np.ascontiguousarray(v, dtype=np.int64),
        np.ascontiguousarray(z, dtype=np.float64),
        int(height),
        int(width),
    )


def joint_bilateral(values, valid, guide, guide_valid, sigma_space, sigma_range, radius):
    """Normalized Gaussian-weighted window sum with range weights taken from ``guide``.

    Neighbors contribute only where both ``valid`` and ``guide_valid`` hold;
    output pixels with an invalid guide or total weight below 1e-12 are 0.
    ``sigma_range=inf`` disables the range term.
    """
    impl = _BACKENDS[_active]
    return impl.joint_bilateral(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(valid, dtype=np.uint8),
        np.ascontiguousarray(guide, dtype=np.float64),
        np.ascontiguousarray(guide_valid, dtype=np.uint8),
        float(sigma_space),
        float(sigma_range),
        int(radius),
    )
