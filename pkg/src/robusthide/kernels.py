"""Backend selection for the hot kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback takes over. Set ``ROBUSTHIDE_PURE_PYTHON=1`` to force the fallback.
Both backends give bitwise-identical results.
"""
import os

from robusthide import _pykernels

if os.environ.get("ROBUSTHIDE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from robusthide import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
round_half_away = _impl.round_half_away
quantize_dequantize = _impl.quantize_dequantize

__all__ = ["BACKEND", "im2col", "col2im", "round_half_away", "quantize_dequantize"]
