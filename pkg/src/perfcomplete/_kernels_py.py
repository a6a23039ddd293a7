"""Pure numpy implementation of the likelihood kernel (import-time fallback)."""
import numpy as np


def loglik_terms(Up, Vp, w, b, mi, ni, si, y):
    """Sum of squared residuals over observed cells and the gradients of ``-sse/2``.

    Prediction for an observed cell ``(m, n, s)`` is ``(Up[m] . Vp[n]) * w[s] + b[s]``.
    Returns ``(sse, gUp, gVp, gw, gb)``.
    """
    M, N, S = Up.shape[0], Vp.shape[0], w.shape[0]
    dot = np.einsum("ij,ij->i", Up[mi], Vp[ni])
    r = y - (dot * w[si] + b[si])
    sse = float(r @ r)
    gw = np.bincount(si, weights=r * dot, minlength=S)
    gb = np.bincount(si, weights=r, minlength=S)
    E = np.bincount(mi * N + ni, weights=r * w[si], minlength=M * N).reshape(M, N)
    return sse, E @ Vp, E.T @ Up, gw, gb
