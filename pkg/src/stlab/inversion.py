"""Numerical inverse Laplace transforms (fixed Talbot and Euler summation).

Both routines take a vectorised transform F(s) accepting complex arrays and
return f(t) for an array of positive t.  They are independent enough that
their difference is a useful accuracy diagnostic.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import comb


def talbot(F, t, M: int = 24) -> np.ndarray:
    """Fixed Talbot inversion (Abate & Valko 2004), double precision.

    The contour s(theta) = r theta (cot theta + i), r = 2M/(5t).  M = 24
    gives ~1e-12 absolute accuracy before round-off, which is the limit.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = 2.0 * M / (5.0 * t)
    theta = np.arange(1, M) * math.pi / M
    cot = 1.0 / np.tan(theta)
    sigma = theta + (theta * cot - 1.0) * cot
    s = r[:, None] * theta[None, :] * (cot[None, :] + 1j)
    Fs = F(s.ravel()).reshape(s.shape)
    terms = np.exp(t[:, None] * s) * Fs * (1.0 + 1j * sigma[None, :])
    f0 = 0.5 * np.exp(r * t) * np.real(F(r.astype(complex)))
    return (r / M) * (f0 + np.real(terms).sum(axis=1))


def euler(F, t, n: int = 38, m: int = 11, A: float = 18.4) -> np.ndarray:
    """Abate-Whitt Fourier-series inversion with Euler summation.

    Discretisation error is about exp(-A) for |f| <= 1.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(0, n + m + 1)
    s = (A / (2.0 * t))[:, None] + 1j * math.pi * k[None, :] / t[:, None]
    vals = np.real(F(s.ravel()).reshape(s.shape))
    vals[:, 0] *= 0.5
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    partial = np.cumsum(vals * sign[None, :], axis=1)
    # binomial average of partial sums n..n+m
    w = comb(m, np.arange(m + 1)) / 2.0**m
    acc = partial[:, n : n + m + 1] @ w
    return np.exp(A / 2.0) / t * acc
