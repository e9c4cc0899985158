"""Kernel backend selection.

The compiled Cython core is used when importable; otherwise the numpy
fallback. ``HOMOL2O_KERNELS=python`` forces the fallback (useful for
benchmarking and debugging), ``HOMOL2O_KERNELS=compiled`` makes a missing
extension a hard error.
"""

import os

_choice = os.environ.get("HOMOL2O_KERNELS", "auto").lower()

if _choice == "python":
    from . import _fallback as impl
elif _choice == "compiled":
    from . import _core as impl  # ImportError here means the ext was not built
else:
    try:
        from . import _core as impl
    except ImportError:
        from . import _fallback as impl

from . import _fallback

COMPILED = impl.COMPILED

relu = impl.relu
relu_grad = impl.relu_grad
abs_val = impl.abs_val
abs_grad = impl.abs_grad
square_row_sum = impl.square_row_sum
square_row_sum_grad = impl.square_row_sum_grad
hinge_row_sum = impl.hinge_row_sum
hinge_row_sum_grad = impl.hinge_row_sum_grad
adam_update = impl.adam_update

# vectorized libm outruns any scalar loop; tanh always goes through numpy
tanh = _fallback.tanh
tanh_grad = _fallback.tanh_grad
