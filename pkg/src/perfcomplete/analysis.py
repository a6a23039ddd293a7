"""Post-hoc analyses: singular spectrum, latent-dimension sweep, profile
effects and model/dataset informativeness."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .inference import FitResult, fit
from .models import ModelSpec
from .predict import evaluation_mask, predict, rmse
from .profiles import ProfileSet
from .sampler import SamplerConfig
from .tensor import ScoreTensor, split_mask


def singular_spectrum(matrix) -> np.ndarray:
    """All min(M, N) singular values in descending order."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise ValueError("singular spectrum needs a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.svd(A, compute_uv=False)


def dimension_sweep(tensor: ScoreTensor, dims, spec: ModelSpec, cfg: SamplerConfig,
                    test_ratio: float = 0.2, split_seed: int = 0,
                    profiles: ProfileSet | None = None) -> list[dict]:
    """Train and test RMSE (raw scale) for each latent dimension on one split."""
    split = split_mask(tensor, test_ratio, split_seed)
    truth = np.where(tensor.observed, tensor.values, 0.0)
    rows = []
    for D in dims:
        if D < 1:
            raise ValueError("latent dimensions must be >= 1")
        res = fit(tensor, split.train, replace(spec, D=int(D)), cfg, profiles)
        mean = predict(res).mean
        rows.append({"D": int(D),
                     "train_rmse": rmse(mean, truth, evaluation_mask(tensor, split.train)),
                     "test_rmse": rmse(mean, truth, evaluation_mask(tensor, split.test))})
    return rows


def profile_effect_from_states(states, profiles: ProfileSet, column: int) -> np.ndarray:
    """Posterior mean over states of Y[column] . V'_n for every dataset n."""
    effects = []
    for st in states:
        Vp = st.V + profiles.G @ st.X
        effects.append(Vp @ st.Y[column])
    return np.mean(effects, axis=0)


def profile_effect(result: FitResult, feature: str) -> np.ndarray:
    """Effect of one model-profile column on every dataset.

    Needs a constrained fit; ``feature`` names a column of H.
    """
    if not result.spec.constrained or result.profiles is None:
        raise ValueError("profile effects need a constrained (CPTF/BCPTF) fit")
    names = result.profiles.model_features
    if feature not in names:
        raise ValueError(f"unknown feature {feature!r}; known: {names}")
    return profile_effect_from_states(result.states(), result.profiles, names.index(feature))


def _revealed_mean(args):
    tensor, train, spec, cfg, profiles = args
    return predict(fit(tensor, train, spec, cfg, profiles)).mean


def reveal_masks(tensor: ScoreTensor, base_train, axis: str, index: int):
    """``(train, score_set)`` after revealing one model row or dataset column.

    ``score_set`` holds the scorable cells hidden under ``base_train`` minus the
    revealed row/column itself.
    """
    if axis not in ("model", "dataset"):
        raise ValueError("axis must be 'model' or 'dataset'")
    base_train = np.asarray(base_train, dtype=bool)
    block = np.zeros(tensor.shape, dtype=bool)
    if axis == "model":
        block[index] = True
    else:
        block[:, index] = True
    hidden = tensor.observed & ~base_train
    return base_train | (tensor.observed & block), evaluation_mask(tensor, hidden & ~block)


def informativeness(tensor: ScoreTensor, base_train, spec: ModelSpec, cfg: SamplerConfig,
                    axis: str = "model", profiles: ProfileSet | None = None,
                    candidates=None, base: FitResult | None = None,
                    threads: int = 1) -> list[tuple[str, float]]:
    """RMSE improvement from revealing a whole model row (or dataset column).

    For each candidate the model is refit on ``base_train`` plus all observed
    cells of that row/column, and both fits are scored on the cells that stay
    hidden outside it. Returned sorted by decreasing improvement.
    """
    if axis not in ("model", "dataset"):
        raise ValueError("axis must be 'model' or 'dataset'")
    base_train = np.asarray(base_train, dtype=bool)
    truth = np.where(tensor.observed, tensor.values, 0.0)
    if base is None:
        base = fit(tensor, base_train, spec, cfg, profiles)
    base_mean = predict(base).mean
    ids = tensor.model_ids if axis == "model" else tensor.dataset_ids
    idx = list(range(len(ids)) if candidates is None else candidates)
    scored, jobs = {}, []
    for i in idx:
        train, score_set = reveal_masks(tensor, base_train, axis, i)
        if not score_set.any() or np.array_equal(train, base_train):
            scored[i] = None
            continue
        scored[i] = score_set
        jobs.append((i, (tensor, train, spec, cfg, profiles)))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            means = list(ex.map(_revealed_mean, [j for _, j in jobs]))
    else:
        means = [_revealed_mean(j) for _, j in jobs]
    new_means = {i: m for (i, _), m in zip(jobs, means)}
    out = []
    for i in idx:
        if scored[i] is None:
            out.append((ids[i], 0.0))
        else:
            out.append((ids[i], rmse(base_mean, truth, scored[i])
                        - rmse(new_means[i], truth, scored[i])))
    return sorted(out, key=lambda x: -x[1])


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
