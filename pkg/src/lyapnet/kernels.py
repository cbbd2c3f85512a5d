"""Backend selection for the conv/pool kernels.

The compiled module is used when it was built and ``LYAPNET_PURE_PYTHON`` is
unset; otherwise the numpy fallback is used. ``BACKEND`` names the choice.
``im2col`` always uses numpy: its strided-view gather beats the compiled loop
(see benchmarks/bench_kernels.py).
"""

import os

from . import _kernels_py

conv_out_size = _kernels_py.conv_out_size

_impl = _kernels_py
BACKEND = "python"
if not os.environ.get("LYAPNET_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

im2col = _kernels_py.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = ["BACKEND", "conv_out_size", "im2col", "col2im",
           "maxpool_forward", "maxpool_backward"]
