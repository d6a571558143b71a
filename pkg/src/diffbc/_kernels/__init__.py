"""Kernel backend selection.

The compiled extension (``_fast``) is preferred when importable; the numpy
implementation (``_np``) is the fallback.  Override with DIFFBC_KERNELS=c|py.
Both backends implement the same functions with matching semantics; results
agree to float64 rounding (the libm/ufunc erf implementations may differ in
the last ulp, so cross-backend comparisons should use a ~1e-12 tolerance).
"""

import os

from ..errors import ConfigError

_requested = os.environ.get("DIFFBC_KERNELS", "auto").lower()
if _requested not in ("auto", "c", "py"):
    raise ConfigError(f"DIFFBC_KERNELS must be auto|c|py, got {_requested!r}")

if _requested in ("auto", "c"):
    try:
        from . import _fast as _impl

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise ConfigError("DIFFBC_KERNELS=c but the compiled extension is not built")
        from . import _np as _impl

        BACKEND = "py"
else:
    from . import _np as _impl

    BACKEND = "py"

gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
leaky_relu = _impl.leaky_relu
leaky_relu_grad = _impl.leaky_relu_grad
adam_update = _impl.adam_update
pairwise_sqdist = _impl.pairwise_sqdist
