"""Small numerically stable kernels shared by the rest of the package.

All arithmetic is float64. Functions that take a vector also accept a 2-D
array and then operate row-wise (along the last axis).

Randomness goes through :func:`make_rng`, which wraps NumPy's Philox
counter-based generator so a seed gives the same stream on every platform.
"""

import numpy as np

from .errors import EmptyInputError, ZeroVectorError

EPS_NORM = 1e-12


def l2_normalize(v, eps=EPS_NORM):
    """Scale ``v`` (or each row of ``v``) to unit Euclidean length.

    Raises ZeroVectorError if any norm is <= ``eps``.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise ZeroVectorError("cannot normalize a (near-)zero vector")
    out = v / norms
    # A second pass removes the last ulp of drift so normalize is idempotent.
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def cosine(u, v):
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def log_sum_exp(xs, axis=None):
    """log(sum(exp(xs))) with a max shift.

    With ``axis`` the reduction is along that axis and an array is returned.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInputError("log_sum_exp of an empty input")
    if axis is None:
        mx = xs.max()
        return float(mx + np.log(np.exp(xs - mx).sum()))
    mx = xs.max(axis=axis, keepdims=True)
    out = mx + np.log(np.exp(xs - mx).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def stable_softmax(xs, axis=-1):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInputError("softmax of an empty input")
    e = np.exp(xs - xs.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def make_rng(seed):
    """Philox-backed ``numpy.random.Generator`` for ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed, n):
    """``n`` independent Philox generators derived from one seed.

    Separate streams keep, e.g., batch order unaffected by whether class
    sampling consumed random numbers in a given run.
    """
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
