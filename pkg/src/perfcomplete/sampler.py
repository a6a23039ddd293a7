"""Gradient-based MCMC: leapfrog, multinomial NUTS and dual-averaging step size.

Identity mass matrix throughout. Trajectories are built by recursive doubling
with the endpoint no-U-turn test; within a subtree the proposal is drawn
uniformly in proportion to weight, across top-level doublings it is biased
towards the new half.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_tune: int = 500
    n_draws: int = 100
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_tune < 0:
            raise ValueError("n_tune must be >= 0")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 1 <= self.max_tree_depth <= 15:
            raise ValueError("max_tree_depth must lie in [1, 15]")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class PosteriorSamples:
    draws: np.ndarray                      # (n_chains * n_draws, dim)
    logp: np.ndarray                       # log joint of every draw
    accept_stat: np.ndarray                # mean acceptance of each post-tune transition
    divergent: np.ndarray                  # bool per post-tune transition
    tree_depth: np.ndarray
    chain: np.ndarray                      # chain index of each draw
    step_size: list[float] = field(default_factory=list)   # adapted eps per chain
    tune_divergences: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.draws.shape[0]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    def diagnostics(self) -> dict:
        chains = []
        for c, eps in enumerate(self.step_size):
            sel = self.chain == c
            chains.append({
                "chain": c,
                "accept_mean": float(self.accept_stat[sel].mean()),
                "step_size": float(eps),
                "divergences": int(self.divergent[sel].sum()),
                "tune_divergences": int(self.tune_divergences[c]),
                "mean_tree_depth": float(self.tree_depth[sel].mean()),
                "draws": int(sel.sum()),
            })
        return {"chains": chains, "draws": len(self), "divergences": self.n_divergent}

    def to_dict(self) -> dict:
        return {
            "draws": self.draws.tolist(),
            "logp": self.logp.tolist(),
            "accept_stat": self.accept_stat.tolist(),
            "divergent": self.divergent.astype(int).tolist(),
            "tree_depth": self.tree_depth.tolist(),
            "chain": self.chain.tolist(),
            "step_size": list(map(float, self.step_size)),
            "tune_divergences": list(map(int, self.tune_divergences)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorSamples":
        return cls(
            draws=np.asarray(d["draws"], dtype=float),
            logp=np.asarray(d["logp"], dtype=float),
            accept_stat=np.asarray(d["accept_stat"], dtype=float),
            divergent=np.asarray(d["divergent"], dtype=bool),
            tree_depth=np.asarray(d["tree_depth"], dtype=int),
            chain=np.asarray(d["chain"], dtype=int),
            step_size=list(d["step_size"]),
            tune_divergences=list(d["tune_divergences"]),
        )


def leapfrog(q, p, eps, grad, g=None):
    """One leapfrog step; returns ``(q', p', grad(q'))``.

    ``g`` is the gradient at ``q`` when already known, saving one evaluation.
    """
    if not eps > 0:
        raise ValueError(f"step size must be > 0, got {eps}")
    if g is None:
        g = grad(q)
    p_half = p + 0.5 * eps * g
    q_new = q + eps * p_half
    g_new = grad(q_new)
    return q_new, p_half + 0.5 * eps * g_new, g_new


def _signed_leapfrog(q, p, g, eps, logp_grad):
    # eps may be negative when integrating backwards in time
    p_half = p + 0.5 * eps * g
    q_new = q + eps * p_half
    lp, g_new = logp_grad(q_new)
    return q_new, p_half + 0.5 * eps * g_new, g_new, lp


def _safe(fn):
    # callers hold np.errstate(all="ignore") for the whole run
    def wrapped(q):
        try:
            lp, g = fn(q)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError, OverflowError):
            return -math.inf, np.zeros_like(q)
        # a non-finite gradient entry makes the sum non-finite
        if not math.isfinite(lp) or not math.isfinite(float(g.sum())):
            return -math.inf, np.zeros_like(q)
        return lp, g
    return wrapped


def find_reasonable_step_size(q, lp, g, logp_grad, rng, eps=1.0, max_iter=100) -> float:
    """Double or halve eps until the one-step acceptance crosses 1/2."""
    p = rng.standard_normal(q.shape)
    h0 = lp - 0.5 * p @ p

    def log_ratio(e):
        _, p1, _, lp1 = _signed_leapfrog(q, p, g, e, logp_grad)
        h1 = lp1 - 0.5 * p1 @ p1
        return h1 - h0 if math.isfinite(h1) else -math.inf

    a = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(max_iter):
        lr = log_ratio(eps)
        if a * lr <= -a * math.log(2.0):
            break
        eps *= 2.0 ** a
    return eps


class DualAveraging:
    """Dual-averaging adaptation of log step size toward a target acceptance.

    The proximity centre is ``log(initial_eps)``, so a chain that already
    accepts at the target rate keeps its initial step size.
    """

    def __init__(self, initial_eps: float, target: float = 0.8,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(initial_eps)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = self.mu
        self.log_eps_bar = self.mu

    def update(self, accept: float) -> float:
        """Feed one acceptance statistic; return the step size to use next."""
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(t) / self.gamma * self.h_bar
        eta = t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final_eps(self) -> float:
        return math.exp(self.log_eps_bar)


def adapt_step_size(history, initial_eps: float, target: float = 0.8) -> float:
    """Adapted step size after feeding a sequence of acceptance statistics."""
    da = DualAveraging(initial_eps, target)
    for a in history:
        da.update(a)
    return da.final_eps


# ---------------------------------------------------------------- NUTS

class _Tree:
    __slots__ = ("q_minus", "p_minus", "g_minus", "q_plus", "p_plus", "g_plus",
                 "q_prop", "g_prop", "lp_prop", "log_w", "turning", "diverging",
                 "sum_accept", "n_leaves")


def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _no_u_turn(q_minus, q_plus, p_minus, p_plus) -> bool:
    dq = q_plus - q_minus
    return dq @ p_minus >= 0 and dq @ p_plus >= 0


def _build_tree(q, p, g, direction, depth, eps, h0, logp_grad, rng) -> _Tree:
    if depth == 0:
        q1, p1, g1, lp1 = _signed_leapfrog(q, p, g, direction * eps, logp_grad)
        h1 = lp1 - 0.5 * p1 @ p1 if math.isfinite(lp1) else -math.inf
        delta = h1 - h0
        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q1
        t.p_minus = t.p_plus = p1
        t.g_minus = t.g_plus = t.g_prop = g1
        t.lp_prop = lp1
        t.diverging = not (delta > -MAX_DELTA_H)
        t.turning = False
        t.log_w = delta if math.isfinite(delta) else -math.inf
        t.sum_accept = min(1.0, math.exp(delta)) if math.isfinite(delta) else 0.0
        t.n_leaves = 1
        return t

    inner = _build_tree(q, p, g, direction, depth - 1, eps, h0, logp_grad, rng)
    if inner.diverging or inner.turning:
        return inner
    if direction > 0:
        outer = _build_tree(inner.q_plus, inner.p_plus, inner.g_plus, direction,
                            depth - 1, eps, h0, logp_grad, rng)
    else:
        outer = _build_tree(inner.q_minus, inner.p_minus, inner.g_minus, direction,
                            depth - 1, eps, h0, logp_grad, rng)
    inner.sum_accept += outer.sum_accept
    inner.n_leaves += outer.n_leaves
    if outer.diverging or outer.turning:
        inner.diverging = inner.diverging or outer.diverging
        inner.turning = True
        return inner
    log_w = _logaddexp(inner.log_w, outer.log_w)
    # uniform progressive sampling inside a subtree
    if log_w > -math.inf and math.log(rng.random()) < outer.log_w - log_w:
        inner.q_prop, inner.g_prop, inner.lp_prop = outer.q_prop, outer.g_prop, outer.lp_prop
    inner.log_w = log_w
    if direction > 0:
        inner.q_plus, inner.p_plus, inner.g_plus = outer.q_plus, outer.p_plus, outer.g_plus
    else:
        inner.q_minus, inner.p_minus, inner.g_minus = outer.q_minus, outer.p_minus, outer.g_minus
    inner.turning = not _no_u_turn(inner.q_minus, inner.q_plus, inner.p_minus, inner.p_plus)
    return inner


def nuts_transition(q, lp, g, eps, logp_grad, rng, max_depth=10):
    """One NUTS transition from ``q``.

    Returns ``(q', lp', g', accept_stat, diverged, depth)``.
    """
    p0 = rng.standard_normal(q.shape)
    h0 = lp - 0.5 * p0 @ p0
    q_minus = q_plus = q
    p_minus = p_plus = p0
    g_minus = g_plus = g
    q_new, lp_new, g_new = q, lp, g
    log_w = 0.0
    sum_accept, n_leaves = 0.0, 0
    diverged = False
    depth = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(q_plus, p_plus, g_plus, 1, depth, eps, h0, logp_grad, rng)
            q_plus, p_plus, g_plus = sub.q_plus, sub.p_plus, sub.g_plus
        else:
            sub = _build_tree(q_minus, p_minus, g_minus, -1, depth, eps, h0, logp_grad, rng)
            q_minus, p_minus, g_minus = sub.q_minus, sub.p_minus, sub.g_minus
        depth += 1
        sum_accept += sub.sum_accept
        n_leaves += sub.n_leaves
        if sub.diverging:
            diverged = True
            break
        if sub.turning:
            break
        # biased progressive sampling favours the newer half
        if math.log(rng.random()) < sub.log_w - log_w:
            q_new, lp_new, g_new = sub.q_prop, sub.lp_prop, sub.g_prop
        log_w = _logaddexp(log_w, sub.log_w)
        if not _no_u_turn(q_minus, q_plus, p_minus, p_plus):
            break
    return q_new, lp_new, g_new, sum_accept / max(n_leaves, 1), diverged, depth


def _run_chain(logp_grad, init, cfg: SamplerConfig, chain: int):
    rng = np.random.default_rng([cfg.seed, chain])
    q = np.array(init, dtype=float)
    lp, g = logp_grad(q)
    if not math.isfinite(lp):
        raise SamplerError("log density is not finite at the initial point")
    eps = find_reasonable_step_size(q, lp, g, logp_grad, rng)
    da = DualAveraging(eps, cfg.target_accept)
    tune_div = 0
    for _ in range(cfg.n_tune):
        q, lp, g, acc, div, _ = nuts_transition(q, lp, g, eps, logp_grad, rng, cfg.max_tree_depth)
        tune_div += div
        eps = da.update(acc)
    if cfg.n_tune > 0:
        if tune_div == cfg.n_tune:
            raise SamplerError(f"all {cfg.n_tune} tuning transitions diverged "
                               f"(final step size {eps:.3g})")
        eps = da.final_eps
    out = np.empty((cfg.n_draws, q.size))
    lps = np.empty(cfg.n_draws)
    accs = np.empty(cfg.n_draws)
    divs = np.zeros(cfg.n_draws, dtype=bool)
    depths = np.zeros(cfg.n_draws, dtype=int)
    for i in range(cfg.n_draws):
        q, lp, g, accs[i], divs[i], depths[i] = nuts_transition(
            q, lp, g, eps, logp_grad, rng, cfg.max_tree_depth)
        out[i] = q
        lps[i] = lp
    return out, lps, accs, divs, depths, eps, tune_div


def nuts_sample(logp_grad, init, cfg: SamplerConfig, logp=None) -> PosteriorSamples:
    """Draw ``cfg.n_draws`` post-tuning samples per chain with NUTS.

    Parameters
    ----------
    logp_grad : callable
        ``q -> (log density, gradient)``. A separate ``logp`` may be passed
        with ``logp_grad`` returning only the gradient.
    init : array_like
        Start point, shared by all chains.
    """
    if logp is not None:
        grad_fn = logp_grad

        def logp_grad(q):
            return logp(q), grad_fn(q)

    fn = _safe(logp_grad)
    with np.errstate(all="ignore"):
        parts = [_run_chain(fn, init, cfg, c) for c in range(cfg.n_chains)]
    return PosteriorSamples(
        draws=np.vstack([p[0] for p in parts]),
        logp=np.concatenate([p[1] for p in parts]),
        accept_stat=np.concatenate([p[2] for p in parts]),
        divergent=np.concatenate([p[3] for p in parts]),
        tree_depth=np.concatenate([p[4] for p in parts]),
        chain=np.repeat(np.arange(cfg.n_chains), cfg.n_draws),
        step_size=[p[5] for p in parts],
        tune_divergences=[p[6] for p in parts],
    )
