"""Posterior predictions, error metrics and mean baselines on the raw score scale."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Normalizer, ScoreTensor


@dataclass
class PredictionReport:
    mean: np.ndarray
    std: np.ndarray
    evaluated: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)


def predict_from_draws(draws, normalizer: Normalizer, clip=None) -> PredictionReport:
    """Mean and per-entry sd of normalized reconstructions, mapped back to raw scale.

    ``draws`` has shape (n_draws, M, N, S). The sd is the population sd over
    draws, multiplied by each metric's normalizer scale.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 1:
        raise ValueError("need at least one draw")
    mean = normalizer.denormalize(draws.mean(axis=0))
    std = draws.std(axis=0) * normalizer.sd
    if clip is not None:
        mean = np.clip(mean, *clip)
    return PredictionReport(mean=mean, std=std)


def predict(fit, clip=None) -> PredictionReport:
    """Prediction report for a :class:`~perfcomplete.inference.FitResult`."""
    return predict_from_draws(fit.normalized_draws(), fit.normalizer, clip=clip)


def combine_reports(parts, shape) -> PredictionReport:
    """Assemble per-metric reports ``[(metric_indices, report), ...]`` into one tensor."""
    mean = np.zeros(shape)
    std = np.zeros(shape)
    for idx, rep in parts:
        mean[:, :, idx] = rep.mean
        std[:, :, idx] = rep.std
    return PredictionReport(mean=mean, std=std)


# ---------------------------------------------------------------- metrics

def _masked(pred, truth, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    return np.asarray(pred, dtype=float)[mask], np.asarray(truth, dtype=float)[mask]


def rmse(pred, truth, mask=None) -> float:
    if mask is None:
        mask = np.ones(np.shape(truth), dtype=bool)
    p, t = _masked(pred, truth, mask)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(pred, truth, mask=None) -> float:
    if mask is None:
        mask = np.ones(np.shape(truth), dtype=bool)
    p, t = _masked(pred, truth, mask)
    return float(np.mean(np.abs(p - t)))


def r2(pred, truth, mask=None) -> float:
    """Coefficient of determination, centred on the mean of the masked truth."""
    if mask is None:
        mask = np.ones(np.shape(truth), dtype=bool)
    p, t = _masked(pred, truth, mask)
    ss_res = np.sum((t - p) ** 2)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -np.inf
    return float(1.0 - ss_res / ss_tot)


def evaluation_mask(tensor: ScoreTensor, test) -> np.ndarray:
    """Test cells on valid (dataset, metric) pairs; invalid cells are never scored."""
    return np.asarray(test, dtype=bool) & tensor.valid[None, :, :] & tensor.observed


def evaluate(pred, tensor: ScoreTensor, test) -> dict:
    """RMSE, MAE and R^2 overall and per metric over valid test cells."""
    mask = evaluation_mask(tensor, test)
    truth = np.where(tensor.observed, tensor.values, 0.0)
    out = {"overall": _scores(pred, truth, mask), "per_metric": {}}
    for s, mid in enumerate(tensor.metric_ids):
        m = np.zeros_like(mask)
        m[:, :, s] = mask[:, :, s]
        if m.any():
            out["per_metric"][mid] = _scores(pred, truth, m)
    return out


def _scores(pred, truth, mask):
    return {"rmse": rmse(pred, truth, mask), "mae": mae(pred, truth, mask),
            "r2": r2(pred, truth, mask), "n": int(mask.sum())}


# ---------------------------------------------------------------- baselines

def _metric_means(tensor, train):
    train = np.asarray(train, dtype=bool)
    if not train.any():
        raise ValueError("train mask is empty")
    vals = np.where(train, tensor.values, 0.0)
    cnt = train.sum(axis=(0, 1))
    glob = np.divide(vals.sum(axis=(0, 1)), cnt, out=np.zeros(tensor.shape[2]), where=cnt > 0)
    return vals, train, glob


def global_mean_baseline(tensor: ScoreTensor, train) -> np.ndarray:
    """Every cell predicted by the training mean of its metric."""
    _, _, glob = _metric_means(tensor, train)
    return np.broadcast_to(glob, tensor.shape).copy()


def mean_of_means_baseline(tensor: ScoreTensor, train) -> np.ndarray:
    """Average of the model mean, dataset mean and global mean (per metric).

    A model or dataset with no training cell for a metric uses the global
    mean of that metric in place of its own mean.
    """
    vals, train, glob = _metric_means(tensor, train)
    rc = train.sum(axis=1)                                  # M x S
    cc = train.sum(axis=0)                                  # N x S
    row = np.where(rc > 0, vals.sum(axis=1) / np.maximum(rc, 1), glob[None, :])
    col = np.where(cc > 0, vals.sum(axis=0) / np.maximum(cc, 1), glob[None, :])
    return (row[:, None, :] + col[None, :, :] + glob[None, None, :]) / 3.0


# ---------------------------------------------------------------- export

def write_prediction_csv(path, tensor: ScoreTensor, report: PredictionReport, test=None) -> None:
    test = np.zeros(tensor.shape, dtype=bool) if test is None else np.asarray(test, dtype=bool)
    M, N, S = tensor.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "dataset_id", "metric_id", "mean", "std", "observed", "in_test", "truth"])
        for m in range(M):
            for n in range(N):
                for s in range(S):
                    obs = bool(tensor.observed[m, n, s])
                    w.writerow([tensor.model_ids[m], tensor.dataset_ids[n], tensor.metric_ids[s],
                                repr(float(report.mean[m, n, s])), repr(float(report.std[m, n, s])),
                                int(obs), int(test[m, n, s]),
                                repr(float(tensor.values[m, n, s])) if obs else ""])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
