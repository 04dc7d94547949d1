"""Kernel backend selection.

Two interchangeable implementations of the elementwise fusion kernels exist:
a compiled Cython core (built at install time) and a pure-NumPy fallback.
The compiled core is preferred when importable. Selection can be forced with
the environment variable PWVQA_BACKEND={c,py} or, at runtime, with
`set_backend` (process-global; meant for tests and benchmarks).
"""

import os

from . import _kernels_py

_impls = {"py": _kernels_py}
try:
    from . import _kernels as _kernels_c

    _impls["c"] = _kernels_c
except ImportError:
    pass

_forced = os.environ.get("PWVQA_BACKEND")
if _forced is not None and _forced not in _impls:
    raise ImportError(
        f"PWVQA_BACKEND={_forced!r} is not available; choices: {sorted(_impls)}"
    )

_impl = _impls[_forced] if _forced else _impls.get("c", _kernels_py)


def active_backend():
    """Name of the backend currently in use ('c' or 'py')."""
    return _impl.NAME


def available_backends():
    return sorted(_impls)


def set_backend(name):
    """Switch the active backend. Raises KeyError for unknown/unbuilt names."""
    global _impl
    _impl = _impls[name]


def sigmoid(x):
    return _impl.sigmoid(x)


def log_sigmoid(x):
    return _impl.log_sigmoid(x)


def ea_forward(zq, zv, zk, alpha, eps):
    return _impl.ea_forward(zq, zv, zk, alpha, eps)


def ea_backward(zq, zv, zk, alpha, eps):
    return _impl.ea_backward(zq, zv, zk, alpha, eps)


def sum_forward(zq, zv, zk):
    return _impl.sum_forward(zq, zv, zk)


def sum_backward(zq, zv, zk):
    return _impl.sum_backward(zq, zv, zk)


def hm_forward(zq, zv, zk):
    return _impl.hm_forward(zq, zv, zk)


def hm_backward(zq, zv, zk):
    return _impl.hm_backward(zq, zv, zk)


def rubi_forward(zk, zq):
    return _impl.rubi_forward(zk, zq)


def rubi_backward(zk, zq):
    return _impl.rubi_backward(zk, zq)
