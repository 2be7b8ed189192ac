"""Dense float64 kernels shared by every other module."""

import numpy as np

from .errors import DimensionError, NormalizationError, ParameterError

#: Bit generator behind :func:`seeded_rng`; recorded in checkpoint headers.
RNG_ALGORITHM = "numpy.PCG64"


def l2_normalize(v, axis=-1):
    """Scale ``v`` (a vector, or rows of a matrix) to unit Euclidean norm.

    Raises NormalizationError if any vector being normalized is all zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0.0):
        raise NormalizationError("cannot normalize a zero vector")
    return v / norm


def softmax(logits, tau=1.0, axis=-1):
    """Temperature softmax ``exp(x/tau) / sum exp(x/tau)`` with max subtraction."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, tau=1.0, axis=-1):
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def pairwise_similarity(A, B):
    """Inner-product matrix ``S[i, j] = <A_i, B_j>`` between two sets of rows."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A @ B.T


def seeded_rng(seed):
    """Return a numpy Generator over PCG64 seeded with ``seed``.

    PCG64 output is specified bit-for-bit by numpy, so streams replay
    identically across runs and platforms.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))
