"""Log-semiring arithmetic.

Weights are natural-log scores. ``plus`` is log-sum-exp, ``times`` is
addition, ``ZERO`` is -inf and ``ONE`` is 0.
"""

import math

import numpy as np

ZERO = -math.inf
ONE = 0.0


def plus(a: float, b: float) -> float:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def times(a: float, b: float) -> float:
    # -inf + inf never occurs: weights are finite or -inf.
    return a + b


def lse(values) -> float:
    """Log-sum-exp of a sequence of scalars, -inf when empty."""
    m = ZERO
    for v in values:
        if v > m:
            m = v
    if m == ZERO:
        return ZERO
    total = 0.0
    for v in values:
        total += math.exp(v - m)
    return m + math.log(total)


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted log-sum-exp along ``axis``; rows that are all -inf give -inf."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a - np.expand_dims(logsumexp(a, axis=axis), axis)
