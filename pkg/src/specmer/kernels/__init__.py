"""Hot-loop kernels: compiled extension when built, numpy fallback otherwise.

Set SPECMER_KERNELS=python or SPECMER_KERNELS=compiled to force a backend
(the benchmark script uses this); the default prefers the extension.
"""

import os

_forced = os.environ.get("SPECMER_KERNELS", "").strip().lower()

if _forced == "python":
    from . import _numpy_backend as _impl
    BACKEND = "python"
elif _forced == "compiled":
    from . import _conv_kernels as _impl
    BACKEND = "compiled"
else:
    try:
        from . import _conv_kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        from . import _numpy_backend as _impl
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool2x2", "maxpool2x2_backward"]
