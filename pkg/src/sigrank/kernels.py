"""Hot loops, compiled when the extension is built.

Set ``SIGRANK_PURE_PYTHON=1`` to force the pure-Python implementations.
"""

import os

from . import _pykernels

BACKEND = "python"
dtw_distance = _pykernels.dtw_distance
loss_augmented_dp = _pykernels.loss_augmented_dp
selu_mask_forward = _pykernels.selu_mask_forward
selu_mask_backward = _pykernels.selu_mask_backward
maxpool_forward = _pykernels.maxpool_forward
maxpool_backward = _pykernels.maxpool_backward

if os.environ.get("SIGRANK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        dtw_distance = _kernels.dtw_distance
        loss_augmented_dp = _kernels.loss_augmented_dp
        selu_mask_forward = _kernels.selu_mask_forward
        selu_mask_backward = _kernels.selu_mask_backward
        maxpool_forward = _kernels.maxpool_forward
        maxpool_backward = _kernels.maxpool_backward

__all__ = ["BACKEND", "dtw_distance", "loss_augmented_dp", "selu_mask_forward", "selu_mask_backward",
           "maxpool_forward", "maxpool_backward"]
