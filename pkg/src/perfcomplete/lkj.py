"""Correlation Cholesky factors from unconstrained reals, and the LKJ density.

The bijection maps ``D(D-1)/2`` reals through ``tanh`` to canonical partial
correlations, then builds each row of ``L`` so that it has unit norm:

    L[i, k] = y[i, k] * sqrt(t[i, k]),   t[i, k] = prod_{j<k} (1 - y[i, j]**2)
    L[i, i] = sqrt(t[i, i])

Unconstrained coordinates are ordered row-major over the strict lower triangle.
"""
from __future__ import annotations

import numpy as np
from scipy.special import betaln


def n_corr(D: int) -> int:
    return D * (D - 1) // 2


def _sech2(z):
    return 1.0 / np.cosh(z) ** 2


def corr_cholesky(z, D: int):
    """Return ``(L, log_jacobian)`` for the unconstrained vector ``z``.

    ``log_jacobian`` is the log |det| of the map from ``z`` to the strict lower
    triangle of ``L``.
    """
    z = np.asarray(z, dtype=float)
    L = np.zeros((D, D))
    L[0, 0] = 1.0
    logjac = 0.0
    pos = 0
    for i in range(1, D):
        zi = z[pos:pos + i]
        pos += i
        y = np.tanh(zi)
        one_m = _sech2(zi)
        log_one_m = np.log(one_m)
        # log t[i, k] for k = 0..i
        log_t = np.concatenate(([0.0], np.cumsum(log_one_m)))
        L[i, :i] = y * np.exp(0.5 * log_t[:i])
        L[i, i] = np.exp(0.5 * log_t[i])
        logjac += log_one_m.sum() + 0.5 * log_t[1:i].sum()
    return L, logjac


def corr_cholesky_vjp(z, D: int, gL) -> np.ndarray:
    """Gradient w.r.t. ``z`` of ``<gL, L(z)> + log_jacobian(z)``.

    ``gL`` is held fixed (a vector-Jacobian product plus the Jacobian term);
    only its lower triangle is read.
    """
    z = np.asarray(z, dtype=float)
    gz = np.zeros_like(z)
    pos = 0
    for i in range(1, D):
        zi = z[pos:pos + i]
        y = np.tanh(zi)
        one_m = _sech2(zi)
        log_t = np.concatenate(([0.0], np.cumsum(np.log(one_m))))
        row = np.empty(i + 1)
        row[:i] = y * np.exp(0.5 * log_t[:i])
        row[i] = np.exp(0.5 * log_t[i])
        contrib = gL[i, :i + 1] * row
        # A[k] = sum_{j>k} gL[i, j] * L[i, j]
        A = np.cumsum(contrib[::-1])[::-1][1:]
        k = np.arange(i)
        gz[pos:pos + i] = (gL[i, :i] * np.exp(0.5 * log_t[:i]) * one_m
                           - y * (A + (i - 1 - k)) - 2.0 * y)
        pos += i
    return gz


def corr_cholesky_inverse(L) -> np.ndarray:
    """Recover the unconstrained vector from a correlation Cholesky factor."""
    L = np.asarray(L, dtype=float)
    D = L.shape[0]
    z = np.empty(n_corr(D))
    pos = 0
    for i in range(1, D):
        remaining = 1.0
        for k in range(i):
            y = L[i, k] / np.sqrt(remaining)
            z[pos] = np.arctanh(y)
            remaining -= L[i, k] ** 2
            pos += 1
    return z


def lkj_log_normalizer(D: int, eta: float) -> float:
    """log of the integral of det(R)**(eta - 1) over D x D correlation matrices."""
    total = 0.0
    for k in range(1, D):
        a = eta + 0.5 * (D - k - 1)
        total += (2 * eta - 2 + D - k) * (D - k) * np.log(2.0) + (D - k) * betaln(a, a)
    return total


def lkj_cholesky_coefs(D: int, eta: float) -> np.ndarray:
    """Coefficients c_i with log LKJCholesky(L) = sum_i c_i log L[i, i] - log normalizer."""
    i = np.arange(D)
    c = D - i + 2.0 * eta - 3.0
    c[0] = 0.0
    return c


def lkj_cholesky_logpdf(L, eta: float) -> float:
    D = L.shape[0]
    return float(lkj_cholesky_coefs(D, eta) @ np.log(np.diag(L))) - lkj_log_normalizer(D, eta)
