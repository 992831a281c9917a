"""Backend selection for the RK4 sweeps.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy implementation in ``_pykernels`` takes over. Setting the environment
variable ``DKF_ODE_BACKEND=python`` forces the fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "python" if os.environ.get("DKF_ODE_BACKEND") == "python" or _ckernels is None else "cython"
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}") from None


def set_backend(name):
    """Switch the active backend for the whole process."""
    global BACKEND, _impl
    _impl = get_backend(name)
    BACKEND = name


def riccati_sweep(*args):
    return _impl.riccati_sweep(*args)


def sensitivity_sweep(*args):
    return _impl.sensitivity_sweep(*args)


def linear_sweep(*args):
    return _impl.linear_sweep(*args)
