"""Stabilized exponential prefix scan.

Evaluates linear recurrences of the form

    I[k+1] = exp(lf[k]) * I[k] + q[k]

which is the backbone of every exact-exponential recursion in this package
(Ornstein-Uhlenbeck updates, variation-of-constants integrals, weighted
trajectory operators).  Naive prefix products overflow float64 once the
accumulated exponent passes ~700; the scan below works blockwise with local
prefix sums so arbitrary stiffness is handled without overflow.
"""

from __future__ import annotations

import numpy as np

# Largest accumulated |Re exponent| allowed inside one block; exp(250) is far
# from the float64 overflow threshold even after multiplying two such factors.
_BLOCK_CAP = 250.0


def exp_scan(log_factors: np.ndarray, increments: np.ndarray, init=0.0) -> np.ndarray:
    """Run ``I[k+1] = exp(log_factors[k]) * I[k] + increments[k]``.

    Parameters
    ----------
    log_factors : array, shape (n, ...)
        Per-step log multipliers (real or complex).
    increments : array, shape (n, ...)
        Per-step additive terms.
    init : scalar or array broadcastable to the trailing shape
        Value of ``I[0]``.

    Returns
    -------
    array, shape (n+1, ...) with ``out[0] == init``.
    """
    lf = np.asarray(log_factors)
    q = np.asarray(increments)
    if lf.shape != q.shape:
        raise ValueError(f"shape mismatch: log_factors {lf.shape} vs increments {q.shape}")
    n = lf.shape[0]
    dtype = np.result_type(lf.dtype, q.dtype, np.float64)
    out = np.empty((n + 1,) + lf.shape[1:], dtype=dtype)
    out[0] = init
    if n == 0:
        return out

    re = lf.real if np.iscomplexobj(lf) else lf
    step_mag = float(np.max(np.abs(re))) if re.size else 0.0
    if step_mag * n <= _BLOCK_CAP:
        block = n
    else:
        block = max(1, int(_BLOCK_CAP / step_mag))

    carry = out[0].copy() if isinstance(out[0], np.ndarray) else np.asarray(out[0], dtype=dtype)
    a = 0
    while a < n:
        b = min(a + block, n)
        cum = np.cumsum(lf[a:b], axis=0)
        grow = np.exp(cum)
        # I[a+i+1] = e^{cum[i]} * (carry + sum_{j<=i} e^{-cum[j]} q[a+j])
        out[a + 1 : b + 1] = grow * (carry + np.cumsum(q[a:b] / grow, axis=0))
        carry = out[b].copy()
        a = b
    return out
