"""Simulated active evaluation: reveal hidden cells round by round and refit.

Each round fits the model on the currently observed cells, scores the
predictions on the cells that are still hidden, then reveals a batch chosen
by one of three strategies:

* ``uncertainty``: largest posterior sd (normalized scale);
* ``random``: uniform without replacement;
* ``oracle``: largest absolute error against ground truth (normalized scale).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .inference import fit
from .models import ModelSpec
from .predict import evaluation_mask, mae, predict_from_draws, rmse
from .profiles import ProfileSet
from .sampler import SamplerConfig
from .tensor import ScoreTensor, split_mask

STRATEGIES = ("uncertainty", "random", "oracle")


@dataclass(frozen=True)
class ActiveConfig:
    strategy: str = "uncertainty"
    init_fraction: float = 0.2
    batch_fraction: float = 0.05
    budget_fraction: float = 0.1
    seeds: tuple = tuple(range(10))
    spec: ModelSpec = field(default_factory=ModelSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        for name in ("init_fraction", "batch_fraction", "budget_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class ActiveCurve:
    """Seed-averaged records per strategy plus the raw per-seed rows."""

    rounds: dict                      # strategy -> list of {round, fraction, rmse, mae}
    raw: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "round", "fraction", "rmse", "mae"])
            for strategy, recs in self.rounds.items():
                for r in recs:
                    w.writerow([strategy, r["round"], repr(r["fraction"]), repr(r["rmse"]), repr(r["mae"])])

    def write_raw_csv(self, path) -> None:
        cols = ["strategy", "seed", "round", "fraction", "n_revealed", "rmse", "mae", "std_err_corr"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.raw:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def rank_by_uncertainty(std, unobserved) -> list[tuple[int, int, int]]:
    """Unobserved cells by descending sd; ties in (model, dataset, metric) index order."""
    return _rank(std, unobserved)


def _rank(score, candidates) -> list[tuple[int, int, int]]:
    score = np.asarray(score, dtype=float)
    flat = np.flatnonzero(np.asarray(candidates, dtype=bool).ravel())
    if flat.size == 0:
        return []
    order = flat[np.argsort(-score.ravel()[flat], kind="stable")]
    return [tuple(int(i) for i in np.unravel_index(k, score.shape)) for k in order]


def select_batch(strategy, n, hidden, std_norm, abs_err_norm, rng) -> list[tuple[int, int, int]]:
    if strategy == "uncertainty":
        return rank_by_uncertainty(std_norm, hidden)[:n]
    if strategy == "oracle":
        return _rank(abs_err_norm, hidden)[:n]
    flat = np.flatnonzero(hidden.ravel())
    picks = np.sort(rng.choice(flat, size=min(n, flat.size), replace=False))
    return [tuple(int(i) for i in np.unravel_index(k, hidden.shape)) for k in picks]


def _pearson(a, b) -> float:
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


def _round_fit(data, observed, spec, cfg, profiles):
    res = fit(data, observed, spec, cfg, profiles)
    draws = res.normalized_draws()
    report = predict_from_draws(draws, res.normalizer)
    std_norm = draws.std(axis=0)
    err_norm = np.abs(res.normalizer.normalize(np.where(data.observed, data.values, 0.0))
                      - draws.mean(axis=0))
    return report, std_norm, err_norm


def run_trajectory(data: ScoreTensor, cfg: ActiveConfig, seed: int,
                   profiles: ProfileSet | None = None, first=None) -> tuple[list, object]:
    """One seed of one strategy. Returns ``(records, round0_fit)``.

    Each record carries the cells revealed after that round's fit.

    ``first`` may carry a round-0 fit for the same seed computed by another
    strategy; all strategies share the initial mask and round-0 sampler seed.
    """
    truth = np.where(data.observed, data.values, 0.0)
    n_obs = data.n_observed
    observed = split_mask(data, 1.0 - cfg.init_fraction, seed).train
    batch = max(1, int(round(cfg.batch_fraction * n_obs)))
    budget = int(round(cfg.budget_fraction * n_obs))
    if budget > n_obs - observed.sum():
        raise ValueError(f"budget of {budget} entries exceeds the {n_obs - observed.sum()} hidden entries")
    n_rounds = math.ceil(budget / batch)
    rng = np.random.default_rng([seed, 7919])
    revealed_total = 0
    records = []
    round0 = None
    for r in range(n_rounds + 1):
        hidden = data.observed & ~observed
        scfg = SamplerConfig(cfg.sampler.n_tune, cfg.sampler.n_draws, cfg.sampler.target_accept,
                             cfg.sampler.max_tree_depth, seed=seed * 1000 + r,
                             n_chains=cfg.sampler.n_chains)
        if r == 0 and first is not None:
            out = first
        else:
            out = _round_fit(data, observed, cfg.spec, scfg, profiles)
        if r == 0:
            round0 = out
        report, std_norm, err_norm = out
        em = evaluation_mask(data, hidden)
        rec = {"strategy": cfg.strategy, "seed": seed, "round": r,
               "fraction": float(observed.sum() / n_obs), "n_revealed": revealed_total,
               "rmse": math.nan, "mae": math.nan, "std_err_corr": math.nan, "revealed": []}
        if em.any():
            rec.update(rmse=rmse(report.mean, truth, em), mae=mae(report.mean, truth, em),
                       std_err_corr=_pearson(report.std[em], np.abs(report.mean - truth)[em]))
        records.append(rec)
        if r == n_rounds:
            break
        n = min(batch, budget - revealed_total)
        picks = select_batch(cfg.strategy, n, hidden, std_norm, err_norm, rng)
        rec["revealed"] = picks
        observed = observed.copy()
        for cell in picks:
            observed[cell] = True
        revealed_total += len(picks)
    return records, round0


def _average(records) -> list[dict]:
    by_round = {}
    for rec in records:
        by_round.setdefault(rec["round"], []).append(rec)
    out = []
    for r in sorted(by_round):
        rs = by_round[r]
        out.append({"round": r,
                    "fraction": float(np.mean([x["fraction"] for x in rs])),
                    "rmse": float(np.mean([x["rmse"] for x in rs])),
                    "mae": float(np.mean([x["mae"] for x in rs]))})
    return out


def _seed_job(args):
    data, cfg, strategies, seed, profiles = args
    rows, first = [], None
    for strategy in strategies:
        scfg = ActiveConfig(strategy, cfg.init_fraction, cfg.batch_fraction, cfg.budget_fraction,
                            cfg.seeds, cfg.spec, cfg.sampler)
        recs, r0 = run_trajectory(data, scfg, seed, profiles, first)
        first = first or r0
        rows.extend(recs)
    return rows


def run_active(data: ScoreTensor, cfg: ActiveConfig, strategies=None,
               profiles: ProfileSet | None = None, threads: int = 1) -> ActiveCurve:
    """Run the active-evaluation simulation over ``cfg.seeds``.

    ``strategies`` defaults to ``[cfg.strategy]``; passing several shares the
    round-0 fit of each seed between them.
    """
    strategies = list(strategies or [cfg.strategy])
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    jobs = [(data, cfg, strategies, seed, profiles) for seed in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_seed_job, jobs))
    else:
        parts = [_seed_job(j) for j in jobs]
    raw = [rec for part in parts for rec in part]
    rounds = {s: _average([r for r in raw if r["strategy"] == s]) for s in strategies}
    return ActiveCurve(rounds=rounds, raw=raw)
