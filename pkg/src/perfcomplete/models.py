"""Factor models for score tensors as log-joint densities over a flat vector.

Five variants share one likelihood, ``R[m, n, s] ~ N(f[m, n, s], sigma^2)`` on
the training cells, with

* ``PMF``:   f = U'_m . V'_n               (same value for every metric)
* ``PTF``:   f = (U'_m . V'_n) * w_s + b_s
* ``BPTF``:  PTF with hierarchical Gaussian priors on the rows of U and V
  (mean mu, covariance diag(sd) L L^T diag(sd), LKJ on L, Exponential on sd)
* ``CPTF`` / ``BCPTF``: PTF / BPTF with U' = U + H Y and V' = V + G X.

Unconstrained packing order (absent blocks skipped)::

    U, V, w, b, mu_U, mu_V, chol_U, chol_V, sigma_L_U, sigma_L_V, Y, X, log_sigma

Positive scales are stored on the log axis; correlation factors use the
``tanh`` partial-correlation map from :mod:`perfcomplete.lkj`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .lkj import (corr_cholesky, corr_cholesky_inverse, corr_cholesky_vjp,
                  lkj_cholesky_coefs, lkj_log_normalizer, n_corr)

VARIANTS = ("PMF", "PTF", "BPTF", "CPTF", "BCPTF")
LOG_2PI = math.log(2.0 * math.pi)
BLOCK_ORDER = ("U", "V", "w", "b", "mu_U", "mu_V", "chol_U", "chol_V",
               "sigma_L_U", "sigma_L_V", "Y", "X", "log_sigma")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "PMF"
    D: int = 5
    sigma_U: float = 1.0
    sigma_V: float = 1.0
    sigma_w: float = 1.0
    sigma_b: float = 1.0
    sigma_Y: float = 1.0
    sigma_X: float = 1.0
    eta: float = 2.0
    lam: float = 1.0
    noise: float | None = None  # None: learned sigma with a unit half-normal prior

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if int(self.D) != self.D or self.D < 1:
            raise ModelError(f"latent dimension D must be a positive integer, got {self.D}")
        for f in ("sigma_U", "sigma_V", "sigma_w", "sigma_b", "sigma_Y", "sigma_X", "eta", "lam"):
            if not getattr(self, f) > 0:
                raise ModelError(f"{f} must be > 0")
        if self.noise is not None and not self.noise > 0:
            raise ModelError("fixed noise must be > 0")

    @property
    def affine(self) -> bool:
        return self.variant != "PMF"

    @property
    def bayesian(self) -> bool:
        return self.variant in ("BPTF", "BCPTF")

    @property
    def constrained(self) -> bool:
        return self.variant in ("CPTF", "BCPTF")

    @property
    def learned_noise(self) -> bool:
        return self.noise is None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Layout:
    """Block offsets of the flat parameter vector for one (spec, dims) pair."""

    def __init__(self, spec: ModelSpec, M: int, N: int, S: int, K: int = 0, J: int = 0):
        if spec.constrained and (K < 1 or J < 1):
            raise ModelError(f"{spec.variant} needs model and dataset profiles (K, J >= 1)")
        self.spec = spec
        self.M, self.N, self.S, self.K, self.J = M, N, S, K, J
        D = spec.D
        shapes = {"U": (M, D), "V": (N, D)}
        if spec.affine:
            shapes.update(w=(S,), b=(S,))
        if spec.bayesian:
            shapes.update(mu_U=(D,), mu_V=(D,), chol_U=(n_corr(D),), chol_V=(n_corr(D),),
                          sigma_L_U=(D,), sigma_L_V=(D,))
        if spec.constrained:
            shapes.update(Y=(K, D), X=(J, D))
        if spec.learned_noise:
            shapes["log_sigma"] = ()
        self.shapes = {k: shapes[k] for k in BLOCK_ORDER if k in shapes}
        self.slices = {}
        pos = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape, dtype=int))
            self.slices[name] = slice(pos, pos + size)
            pos += size
        self.size = pos

    def unpack(self, v) -> dict:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ModelError(f"parameter vector has length {v.size}, expected {self.size}")
        return {k: v[sl].reshape(self.shapes[k]) for k, sl in self.slices.items()}

    def pack(self, blocks: dict) -> np.ndarray:
        v = np.empty(self.size)
        for k, sl in self.slices.items():
            v[sl] = np.asarray(blocks[k], dtype=float).ravel()
        return v


# ---------------------------------------------------------------- latent state

@dataclass
class LatentState:
    """Constrained-space view of one parameter vector."""

    U: np.ndarray
    V: np.ndarray
    w: np.ndarray | None = None
    b: np.ndarray | None = None
    mu_U: np.ndarray | None = None
    mu_V: np.ndarray | None = None
    L_U: np.ndarray | None = None
    L_V: np.ndarray | None = None
    sigma_L_U: np.ndarray | None = None
    sigma_L_V: np.ndarray | None = None
    Y: np.ndarray | None = None
    X: np.ndarray | None = None
    sigma: float | None = None

    def to_json(self, spec: ModelSpec | None = None) -> str:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if val is not None:
                out[f.name] = np.asarray(val).tolist()
        if spec is not None:
            out["spec"] = spec.to_dict()
        return json.dumps(out, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LatentState":
        d = json.loads(text)
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = float(d[f.name]) if f.name == "sigma" else np.asarray(d[f.name], dtype=float)
        return cls(**kw)


def unpack_state(v, layout: Layout) -> LatentState:
    p = layout.unpack(v)
    spec = layout.spec
    st = LatentState(U=p["U"].copy(), V=p["V"].copy())
    if spec.affine:
        st.w, st.b = p["w"].copy(), p["b"].copy()
    if spec.bayesian:
        st.mu_U, st.mu_V = p["mu_U"].copy(), p["mu_V"].copy()
        st.L_U = corr_cholesky(p["chol_U"], spec.D)[0]
        st.L_V = corr_cholesky(p["chol_V"], spec.D)[0]
        st.sigma_L_U, st.sigma_L_V = np.exp(p["sigma_L_U"]), np.exp(p["sigma_L_V"])
    if spec.constrained:
        st.Y, st.X = p["Y"].copy(), p["X"].copy()
    st.sigma = float(np.exp(p["log_sigma"])) if spec.learned_noise else spec.noise
    return st


def pack_state(state: LatentState, layout: Layout) -> np.ndarray:
    spec = layout.spec
    blocks = {"U": state.U, "V": state.V}
    if spec.affine:
        blocks.update(w=state.w, b=state.b)
    if spec.bayesian:
        blocks.update(mu_U=state.mu_U, mu_V=state.mu_V,
                      chol_U=corr_cholesky_inverse(state.L_U),
                      chol_V=corr_cholesky_inverse(state.L_V),
                      sigma_L_U=np.log(state.sigma_L_U), sigma_L_V=np.log(state.sigma_L_V))
    if spec.constrained:
        blocks.update(Y=state.Y, X=state.X)
    if spec.learned_noise:
        blocks["log_sigma"] = math.log(state.sigma)
    return layout.pack(blocks)


def init_state(spec: ModelSpec, dims, seed: int) -> np.ndarray:
    """Initial unconstrained vector: small Gaussian factors, identity correlations, unit scales."""
    layout = dims if isinstance(dims, Layout) else Layout(spec, *dims)
    rng = np.random.default_rng(seed)
    v = np.zeros(layout.size)
    for name in ("U", "V", "w", "Y", "X"):
        if name in layout.slices:
            sl = layout.slices[name]
            v[sl] = 0.1 * rng.standard_normal(sl.stop - sl.start)
    return v


# ---------------------------------------------------------------- density

def _effective(p: dict, spec: ModelSpec, H, G):
    if spec.constrained:
        return p["U"] + H @ p["Y"], p["V"] + G @ p["X"]
    return p["U"], p["V"]


def _hier_prior(rows, mu, zc, log_sd, eta, lam):
    """Log density and gradients of the hierarchical prior for one side.

    rows ~ N(mu, C C^T), mu ~ N(0, C C^T), C = diag(sd) L, L ~ LKJCholesky(eta),
    sd ~ Exponential(lam); all change-of-variable terms included.
    """
    D = mu.shape[0]
    L, logjac = corr_cholesky(zc, D)
    sd = np.exp(log_sd)
    C = sd[:, None] * L
    Z = np.vstack([rows - mu, mu[None, :]])
    n = Z.shape[0]
    W = solve_triangular(C, Z.T, lower=True)                  # D x n, columns C^-1 z
    logdiag = np.log(np.diag(L))
    coefs = lkj_cholesky_coefs(D, eta)
    lp = (-0.5 * n * D * LOG_2PI - n * (log_sd.sum() + logdiag.sum()) - 0.5 * np.sum(W * W)
          + coefs @ logdiag - lkj_log_normalizer(D, eta) + logjac
          + D * math.log(lam) - lam * sd.sum() + log_sd.sum())

    SinvZ = solve_triangular(C, W, lower=True, trans="T")     # D x n, columns Sigma^-1 z
    g_rows = -SinvZ[:, :-1].T
    g_mu = SinvZ[:, :-1].sum(axis=1) - SinvZ[:, -1]
    gC = np.tril(SinvZ @ W.T)
    gC[np.diag_indices(D)] -= n / np.diag(C)
    gL = gC * sd[:, None]
    gL[np.diag_indices(D)] += coefs / np.diag(L)
    g_zc = corr_cholesky_vjp(zc, D, gL)
    g_log_sd = (gC * L).sum(axis=1) * sd + 1.0 - lam * sd
    return lp, g_rows, g_mu, g_zc, g_log_sd


class FactorModel:
    """Log joint and gradient for one variant on fixed (normalized) training data.

    Parameters
    ----------
    spec : ModelSpec
    values : ndarray, shape (M, N, S)
        Normalized scores; only cells in ``mask`` are read.
    mask : ndarray of bool, shape (M, N, S)
        Training cells entering the likelihood.
    H, G : ndarray, optional
        Model (M x K) and dataset (N x J) profiles, required by constrained variants.
    """

    def __init__(self, spec: ModelSpec, values, mask, H=None, G=None):
        values = np.asarray(values, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        if values.ndim == 2:
            values, mask = values[:, :, None], mask[:, :, None]
        if values.shape != mask.shape:
            raise ModelError("values and mask shapes differ")
        M, N, S = values.shape
        K = J = 0
        if spec.constrained:
            if H is None or G is None:
                raise ModelError(f"{spec.variant} needs profile matrices H and G")
            H = np.ascontiguousarray(H, dtype=float)
            G = np.ascontiguousarray(G, dtype=float)
            if H.shape[0] != M or G.shape[0] != N:
                raise ModelError("profile row counts do not match the tensor")
            K, J = H.shape[1], G.shape[1]
        self.spec = spec
        self.H, self.G = H, G
        self.layout = Layout(spec, M, N, S, K, J)
        self.shape = (M, N, S)
        mi, ni, si = np.nonzero(mask)
        self._mi = mi.astype(np.int64)
        self._ni = ni.astype(np.int64)
        self._si = si.astype(np.int64)
        self._y = np.ascontiguousarray(values[mask])
        if not np.all(np.isfinite(self._y)):
            raise ModelError("non-finite value on a training cell")
        self.n_obs = self._y.size
        self._ones, self._zeros = np.ones(S), np.zeros(S)

    @property
    def dim(self) -> int:
        return self.layout.size

    def log_joint(self, v) -> float:
        return self.log_joint_and_grad(v)[0]

    def grad_log_joint(self, v) -> np.ndarray:
        return self.log_joint_and_grad(v)[1]

    def log_joint_and_grad(self, v):
        spec, lay = self.spec, self.layout
        v = np.asarray(v, dtype=float)
        if v.shape != (lay.size,):
            raise ModelError(f"parameter vector has length {v.size}, expected {lay.size}")
        p = {k: v[sl].reshape(lay.shapes[k]) for k, sl in lay.slices.items()}
        flat = np.zeros(lay.size)
        # gradient blocks are views into the flat output
        g = {k: flat[sl].reshape(lay.shapes[k]) for k, sl in lay.slices.items()}
        Up, Vp = _effective(p, spec, self.H, self.G)
        w = p["w"] if spec.affine else self._ones
        b = p["b"] if spec.affine else self._zeros

        sse, gUp, gVp, gw, gb = kernels.loglik_terms(
            np.ascontiguousarray(Up), np.ascontiguousarray(Vp),
            np.ascontiguousarray(w), np.ascontiguousarray(b),
            self._mi, self._ni, self._si, self._y)
        if spec.learned_noise:
            log_sigma = float(p["log_sigma"])
            sigma = math.exp(log_sigma)
        else:
            sigma = spec.noise
            log_sigma = math.log(sigma)
        inv_var = 1.0 / (sigma * sigma)
        lp = -self.n_obs * (0.5 * LOG_2PI + log_sigma) - 0.5 * sse * inv_var
        gUp *= inv_var
        gVp *= inv_var
        g["U"] += gUp
        g["V"] += gVp
        if spec.affine:
            g["w"] += gw * inv_var
            g["b"] += gb * inv_var
        if spec.constrained:
            g["Y"] += self.H.T @ gUp
            g["X"] += self.G.T @ gVp
        if spec.learned_noise:
            # half-normal(1) on sigma, plus log-Jacobian of sigma = exp(log_sigma)
            lp += math.log(2.0) - 0.5 * LOG_2PI - 0.5 * sigma * sigma + log_sigma
            g["log_sigma"] += -self.n_obs + sse * inv_var + 1.0 - sigma * sigma

        if spec.bayesian:
            for side, rows in (("U", p["U"]), ("V", p["V"])):
                lpi, g_rows, g_mu, g_zc, g_lsd = _hier_prior(
                    rows, p[f"mu_{side}"], p[f"chol_{side}"], p[f"sigma_L_{side}"],
                    spec.eta, spec.lam)
                lp += lpi
                g[side] += g_rows
                g[f"mu_{side}"] += g_mu
                g[f"chol_{side}"] += g_zc
                g[f"sigma_L_{side}"] += g_lsd
        else:
            lp += _iid_normal(p["U"], spec.sigma_U, g["U"])
            lp += _iid_normal(p["V"], spec.sigma_V, g["V"])
        if spec.affine:
            lp += _iid_normal(p["w"], spec.sigma_w, g["w"])
            lp += _iid_normal(p["b"], spec.sigma_b, g["b"])
        if spec.constrained:
            lp += _iid_normal(p["Y"], spec.sigma_Y, g["Y"])
            lp += _iid_normal(p["X"], spec.sigma_X, g["X"])
        return float(lp), flat

    def reconstruct(self, v) -> np.ndarray:
        return reconstruct(unpack_state(v, self.layout), self.spec, self.H, self.G, S=self.shape[2])


def _iid_normal(x, scale, grad_out) -> float:
    inv = 1.0 / (scale * scale)
    grad_out -= x * inv
    xf = x.ravel()
    return -0.5 * x.size * LOG_2PI - x.size * math.log(scale) - 0.5 * float(xf @ xf) * inv


def reconstruct(state: LatentState, spec: ModelSpec, H=None, G=None, S: int | None = None) -> np.ndarray:
    """Dense M x N x S prediction on the normalized scale."""
    Up, Vp = state.U, state.V
    if spec.constrained:
        Up = Up + H @ state.Y
        Vp = Vp + G @ state.X
    P = Up @ Vp.T
    if spec.affine:
        return P[:, :, None] * state.w + state.b
    S = 1 if S is None else S
    return np.repeat(P[:, :, None], S, axis=2)
