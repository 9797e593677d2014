"""Dense float64 matrix primitives: matmul, row softmax, RMS normalization.

Everything operates on plain ``numpy.ndarray`` values.  ``checked_matrix``
is the validating constructor for externally sourced data; internal code
paths that only combine already-checked arrays skip the finite check.
"""

import numpy as np

from .errors import ShapeError, ValidationError


def checked_matrix(data, dtype=np.float64):
    """Build a 2-D array, rejecting NaN/Inf entries.

    Raises ValidationError on non-finite values and ShapeError when the
    input is not two-dimensional.
    """
    m = np.asarray(data, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix contains NaN or Inf entries")
    return m


def matmul(a, b):
    """Matrix product with explicit shape diagnostics.

    Delegates to BLAS via numpy; on a fixed platform and thread count the
    summation order is fixed, so repeated runs are bit-identical.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m):
    """Row-wise softmax with mandatory max subtraction.

    Rows containing -inf entries get zero weight there; a row of all -inf
    is undefined and not produced by any caller.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
        squeeze = True
    else:
        squeeze = False
    row_max = np.max(m, axis=1, keepdims=True)
    z = np.exp(m - row_max)
    out = z / z.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


def rms_norm(x, gain, eps=1e-6):
    """Root-mean-square normalization: y_i = gain_i * x_i / sqrt(mean(x^2) + eps)."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if x.shape != gain.shape:
        raise ShapeError(f"rms_norm length mismatch: x {x.shape} vs gain {gain.shape}")
    if eps < 0:
        raise ValidationError("rms_norm eps must be nonnegative")
    denom = np.mean(x * x) + eps
    if denom == 0.0:
        return np.zeros_like(x)  # zero vector with eps=0: normalized zero stays zero
    return gain * x / np.sqrt(denom)


def rms_norm_rows(x, gain, eps=1e-6):
    """Row-wise rms_norm over a (n, d) matrix with a shared (d,) gain."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if x.ndim != 2 or gain.ndim != 1 or x.shape[1] != gain.shape[0]:
        raise ShapeError(f"rms_norm_rows shape mismatch: x {x.shape} vs gain {gain.shape}")
    scale = 1.0 / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + eps)
    return x * scale * gain


def rms_norm_rows_backward(grad, x, gain, eps=1e-6):
    """Gradient of rms_norm_rows with respect to x (gain is frozen).

    With s = sqrt(mean(x^2) + eps):
        dL/dx = gain*g/s  -  x * sum(g*gain*x, row) / (d * s^3)
    """
    d = x.shape[1]
    ms = np.mean(x * x, axis=1, keepdims=True) + eps
    inv = 1.0 / np.sqrt(ms)
    proj = np.sum(grad * gain * x, axis=1, keepdims=True) / d
    return grad * gain * inv - x * proj * inv**3
