"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``PREDSCALE_PURE=1`` to
force the pure-Python implementation.
"""

import os

from . import _pykernels

if os.environ.get("PREDSCALE_PURE"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
css_residuals = _impl.css_residuals
css_residuals_jacobian = _impl.css_residuals_jacobian
simulate = _impl.simulate


def backends():
    """All importable backends, pure Python first."""
    found = [_pykernels]
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found.append(_kernels)
    return found
