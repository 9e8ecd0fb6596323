"""
Significant-digit text formatting used by every text artifact.

Episode files use 9 significant digits, DBN documents and weights 12.
Values that were quantized with `quantize` survive a format/parse round trip bit for bit.
"""
from typing import Iterable

import numpy as np

EPISODE_DIGITS = 9
MODEL_DIGITS = 12


def format_sig(value: float, digits: int) -> str:
    """Format a float with `digits` significant digits ('inf', '-inf', 'nan' spelled out)."""
    return f"{float(value):.{digits}g}"


def format_row(values: Iterable[float], digits: int, sep: str = " ") -> str:
    return sep.join(format_sig(v, digits) for v in values)


def quantize(values, digits: int = EPISODE_DIGITS):
    """
    Round to the decimal value that `format_sig` would write.

    Works on scalars and arrays; the returned array is float64.
    """
    if np.isscalar(values):
        return float(format_sig(values, digits))
    arr = np.asarray(values, dtype=float)
    flat = [float(format_sig(v, digits)) for v in arr.ravel()]
    return np.array(flat, dtype=float).reshape(arr.shape)
