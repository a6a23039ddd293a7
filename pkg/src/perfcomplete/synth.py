"""Synthetic ground-truth tensors sampled forward from the factor models."""
from __future__ import annotations

import numpy as np

from .models import LatentState, ModelSpec, reconstruct
from .profiles import ProfileSet, one_hot
from .tensor import ScoreTensor

PLANTS = ("profile", "blocks", "outlier")


def sample_corr_cholesky(D: int, eta: float, rng) -> np.ndarray:
    """Draw L with L L^T ~ LKJ(eta) via Beta-distributed partial correlations."""
    L = np.zeros((D, D))
    L[0, 0] = 1.0
    for i in range(1, D):
        remaining = 1.0
        for k in range(i):
            beta = eta + 0.5 * (D - 2 - k)
            y = 2.0 * rng.beta(beta, beta) - 1.0
            L[i, k] = y * np.sqrt(remaining)
            remaining -= L[i, k] ** 2
        L[i, i] = np.sqrt(remaining)
    return L


def _hier_rows(n, D, eta, lam, rng):
    L = sample_corr_cholesky(D, eta, rng)
    sd = rng.exponential(1.0 / lam, size=D)
    C = sd[:, None] * L
    mu = C @ rng.standard_normal(D)
    rows = mu + rng.standard_normal((n, D)) @ C.T
    return rows, mu, L, sd


def _groups(n, k, rng):
    k = min(k, n)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    return rng.permutation(labels)


def generate(spec: ModelSpec, M: int, N: int, S: int = 1, noise_sd: float = 0.1,
             seed: int = 0, plant: str | None = None, n_groups=(3, 3),
             n_outliers: int = 1, outlier_scale: float = 4.0):
    """Sample a complete tensor and its generating state.

    Latent blocks are drawn from the priors of ``spec``; means follow the
    variant's prediction rule and independent ``N(0, noise_sd^2)`` noise is added.

    ``plant`` options:

    ``"profile"``
        one-hot model/dataset groups (``n_groups``) with profile effects Y, X
        drawn from their priors and added to the latent rows (implied for
        constrained variants).
    ``"blocks"``
        like ``"profile"`` but individual latent rows are shrunk to 5% of their
        prior scale, so rows and columns form tight clusters.
    ``"outlier"``
        the first ``n_outliers`` model rows are scaled by ``outlier_scale``.

    Returns ``(tensor, state, profiles)``; ``profiles`` is None without groups.
    """
    if min(M, N, S) < 1:
        raise ValueError("dimensions must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    if plant is not None and plant not in PLANTS:
        raise ValueError(f"unknown plant {plant!r}; expected one of {PLANTS}")
    rng = np.random.default_rng(seed)
    D = spec.D
    st = LatentState(U=None, V=None)
    if spec.bayesian:
        st.U, st.mu_U, st.L_U, st.sigma_L_U = _hier_rows(M, D, spec.eta, spec.lam, rng)
        st.V, st.mu_V, st.L_V, st.sigma_L_V = _hier_rows(N, D, spec.eta, spec.lam, rng)
    else:
        st.U = spec.sigma_U * rng.standard_normal((M, D))
        st.V = spec.sigma_V * rng.standard_normal((N, D))
    if spec.affine:
        st.w = spec.sigma_w * rng.standard_normal(S)
        st.b = spec.sigma_b * rng.standard_normal(S)

    profiles = None
    if spec.constrained or plant in ("profile", "blocks"):
        if plant == "blocks":
            st.U *= 0.05
            st.V *= 0.05
        H = one_hot(_groups(M, n_groups[0], rng))
        G = one_hot(_groups(N, n_groups[1], rng))
        st.Y = spec.sigma_Y * rng.standard_normal((H.shape[1], D))
        st.X = spec.sigma_X * rng.standard_normal((G.shape[1], D))
        profiles = ProfileSet(H, G, [f"model_group{k}" for k in range(H.shape[1])],
                              [f"dataset_group{j}" for j in range(G.shape[1])])
    if plant == "outlier":
        st.U[:n_outliers] *= outlier_scale

    mean = true_mean(st, spec, profiles, S)
    values = mean + noise_sd * rng.standard_normal(mean.shape)
    st.sigma = noise_sd if noise_sd > 0 else None
    tensor = ScoreTensor([f"model{m:03d}" for m in range(M)],
                         [f"data{n:03d}" for n in range(N)],
                         [f"metric{s}" for s in range(S)],
                         values, np.ones(values.shape, dtype=bool))
    return tensor, st, profiles


def _pmf_constrained(st, profiles, S):
    Up = st.U + profiles.H @ st.Y
    Vp = st.V + profiles.G @ st.X
    return np.repeat((Up @ Vp.T)[:, :, None], S, axis=2)


def true_mean(state: LatentState, spec: ModelSpec, profiles: ProfileSet | None, S: int) -> np.ndarray:
    """Noise-free tensor of a generated state."""
    if profiles is None or state.Y is None:
        return reconstruct(state, spec, S=S)
    if spec.affine:
        return reconstruct(state, ModelSpec(variant="CPTF", D=spec.D), profiles.H, profiles.G, S)
    return _pmf_constrained(state, profiles, S)
