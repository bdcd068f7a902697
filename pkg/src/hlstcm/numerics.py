"""Dense floating-point vector/matrix kernels shared by every layer.

Vectors are 1-D and matrices 2-D ``numpy.ndarray``. Everything runs in
float64 by default; floating inputs of higher precision are preserved so
the gradient checker can evaluate the forward pass in extended precision.
Everything here is a pure function; nothing mutates its arguments.
"""

import numpy as np

# exp(709) is the largest argument that stays finite in float64; clipping
# there makes sigmoid saturate smoothly instead of overflowing.
_EXP_CLIP = 709.0


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_float_array(x):
    if type(x) is np.ndarray and x.dtype == np.float64:  # hot path
        return x
    out = np.asarray(x)
    if not np.issubdtype(out.dtype, np.floating):
        out = out.astype(np.float64)
    return out


def as_vector(v, name="vector"):
    """Validate and return ``v`` as a floating 1-D array (no copy if already one)."""
    out = as_float_array(v)
    if out.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {out.shape}")
    return out


def as_matrix(m, name="matrix"):
    """Validate and return ``m`` as a floating 2-D array (no copy if already one)."""
    out = as_float_array(m)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    return out


def matvec(m, v):
    """Matrix-vector product ``m @ v``.

    Raises ShapeError naming both shapes when ``m.shape[1] != v.shape[0]``.
    """
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec shape mismatch: matrix {m.shape} x vector {v.shape}")
    return m @ v


def hadamard(a, b):
    """Element-wise product of two equal-length vectors."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def sigmoid(v):
    """Logistic function 1 / (1 + exp(-v)), saturating without overflow."""
    v = as_float_array(v)
    # exp(-max(v, -709)) == exp(clip(-v) above at 709), one temporary fewer
    return 1.0 / (1.0 + np.exp(-np.maximum(v, -_EXP_CLIP)))


def tanh_act(v):
    """Hyperbolic tangent."""
    return np.tanh(as_float_array(v))


def softmax(v):
    """Probability vector exp(v) / sum(exp(v)), computed with max-subtraction.

    The max shift leaves the result mathematically unchanged but keeps the
    exponentials in range for any finite input.
    """
    v = as_vector(v, "softmax input")
    if v.shape[0] == 0:
        raise ShapeError("softmax of an empty vector is undefined")
    e = np.exp(v - v.max())
    return e / e.sum()
