"""Backend selection for the Kalman kernels.

The compiled extension is used when it imports; setting the environment
variable ``GPMM_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _kalman_py

BACKEND = "python"
covariance_pass = _kalman_py.covariance_pass
mean_pass = _kalman_py.mean_pass

if os.environ.get("GPMM_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kalman_ext
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        covariance_pass = _kalman_ext.covariance_pass
        mean_pass = _kalman_ext.mean_pass

__all__ = ["BACKEND", "covariance_pass", "mean_pass"]
