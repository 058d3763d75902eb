"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy versions in ``_pykernels`` are used. Set ``SSCUNET_BACKEND=python`` to
force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SSCUNET_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def conv1d_forward(x, kernels):
    return _impl.conv1d_forward(x, kernels)


def conv1d_backward(grad, x, kernels):
    return _impl.conv1d_backward(grad, x, kernels)


def maxpool1d_forward(x):
    return _impl.maxpool1d_forward(x)


def maxpool1d_backward(grad, idx, length):
    return _impl.maxpool1d_backward(grad, idx, length)


def slic_assign(features, centers_feat, centers_pos, S, m, labels, dist):
    return _impl.slic_assign(features, centers_feat, centers_pos, S, m, labels, dist)
