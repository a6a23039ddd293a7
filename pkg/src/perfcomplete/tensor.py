"""Score tensors, masks, normalization and file ingestion.

Axis order is always (model, dataset, metric).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or contract-violating score data."""


@dataclass(frozen=True)
class ScoreTensor:
    model_ids: list[str]
    dataset_ids: list[str]
    metric_ids: list[str]
    values: np.ndarray
    observed: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        observed = np.asarray(self.observed, dtype=bool)
        shape = (len(self.model_ids), len(self.dataset_ids), len(self.metric_ids))
        if min(shape) < 1:
            raise DataError("tensor needs at least one model, dataset and metric")
        for name, ids in (("model", self.model_ids), ("dataset", self.dataset_ids),
                          ("metric", self.metric_ids)):
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate {name} identifiers")
        if values.shape != shape or observed.shape != shape:
            raise DataError(f"values/observed must have shape {shape}")
        valid = self.valid
        if valid is None:
            valid = observed.any(axis=0)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != shape[1:]:
            raise DataError(f"validity map must have shape {shape[1:]}")
        if np.any(observed & ~valid[None, :, :]):
            raise DataError("observation on an invalid (dataset, metric) cell")
        if not np.all(np.isfinite(values[observed])):
            raise DataError("non-finite observed value")
        # unobserved cells hold NaN so accidental reads are loud
        values = np.where(observed, values, np.nan)
        for arr in (values, observed, valid):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "model_ids", list(self.model_ids))
        object.__setattr__(self, "dataset_ids", list(self.dataset_ids))
        object.__setattr__(self, "metric_ids", list(self.metric_ids))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def with_observed(self, observed: np.ndarray) -> "ScoreTensor":
        """Copy restricted to a subset of the observed cells."""
        observed = np.asarray(observed, dtype=bool)
        if np.any(observed & ~self.observed):
            raise DataError("new observation mask is not a subset of the observed cells")
        return ScoreTensor(self.model_ids, self.dataset_ids, self.metric_ids,
                           self.values, observed, self.valid)

    def metric_slice(self, s: int) -> "ScoreTensor":
        return ScoreTensor(self.model_ids, self.dataset_ids, [self.metric_ids[s]],
                           self.values[:, :, s:s + 1], self.observed[:, :, s:s + 1],
                           self.valid[:, s:s + 1])


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    sd: np.ndarray

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.sd + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


@dataclass(frozen=True)
class MaskSplit:
    train: np.ndarray
    test: np.ndarray
    test_ratio: float
    seed: int


def split_mask(t: ScoreTensor, test_ratio: float, seed: int) -> MaskSplit:
    """Hide ``round(test_ratio * |observed|)`` observed cells, chosen by a seeded shuffle."""
    if not 0.0 < test_ratio < 1.0:
        raise DataError(f"test_ratio must lie in (0, 1), got {test_ratio}")
    flat = np.flatnonzero(t.observed.ravel())
    if flat.size < 2:
        raise DataError("need at least 2 observed entries to split")
    n_test = int(round(test_ratio * flat.size))
    n_test = min(max(n_test, 1), flat.size - 1)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(flat)[:n_test]
    test = np.zeros(t.observed.size, dtype=bool)
    test[chosen] = True
    test = test.reshape(t.shape)
    return MaskSplit(train=t.observed & ~test, test=test, test_ratio=test_ratio, seed=seed)


def fit_normalizer(t: ScoreTensor, mask: np.ndarray) -> Normalizer:
    """Per-metric z-score fitted on the masked entries only (population sd)."""
    mask = np.asarray(mask, dtype=bool)
    if np.any(mask & ~t.observed):
        raise DataError("normalizer mask must be a subset of the observed cells")
    S = t.shape[2]
    mean = np.zeros(S)
    sd = np.ones(S)
    for s in range(S):
        vals = t.values[:, :, s][mask[:, :, s]]
        if vals.size == 0:
            continue
        mean[s] = vals.mean()
        if np.unique(vals).size >= 2:
            sd[s] = vals.std()
    return Normalizer(mean, sd)


def normalized_values(t: ScoreTensor, norm: Normalizer) -> np.ndarray:
    """Normalized values with unobserved cells set to 0 (never read by the likelihood)."""
    z = norm.normalize(t.values)
    return np.where(t.observed, z, 0.0)


# ---------------------------------------------------------------- file I/O

SCORE_FIELDS = ("model_id", "dataset_id", "metric_id", "value")


def _records_from_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [f for f in SCORE_FIELDS if f not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        return list(reader)


def _records_from_json(path: Path) -> list[dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8") or "[]")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise DataError(f"{path}: expected a JSON array of score records")
    return data


def load_scores(path, format: str | None = None, validity=None) -> ScoreTensor:
    """Read a long-format score file (``long-csv`` or ``json``) into a tensor.

    Axes follow first-appearance order. Without a validity file a (dataset,
    metric) cell is valid when any model has a score for it.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "long-csv"
    if format == "long-csv":
        records = _records_from_csv(path)
    elif format == "json":
        records = _records_from_json(path)
    else:
        raise DataError(f"unknown score format {format!r}")
    if not records:
        raise DataError(f"{path}: no records")

    models: dict[str, int] = {}
    datasets: dict[str, int] = {}
    metrics: dict[str, int] = {}
    cells = {}
    for i, rec in enumerate(records):
        try:
            key = tuple(str(rec[f]) for f in SCORE_FIELDS[:3])
            value = float(rec["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: record {i} unparsable ({exc})") from exc
        if not math.isfinite(value):
            raise DataError(f"{path}: record {i} has non-finite value")
        if key in cells:
            raise DataError(f"{path}: duplicate cell {key}")
        for ident, table in zip(key, (models, datasets, metrics)):
            table.setdefault(ident, len(table))
        cells[key] = value

    shape = (len(models), len(datasets), len(metrics))
    values = np.full(shape, np.nan)
    observed = np.zeros(shape, dtype=bool)
    for (m, n, s), v in cells.items():
        idx = models[m], datasets[n], metrics[s]
        values[idx] = v
        observed[idx] = True

    valid = None
    if validity is not None:
        valid = load_validity(validity, list(datasets), list(metrics))
    return ScoreTensor(list(models), list(datasets), list(metrics), values, observed, valid)


def load_validity(path, dataset_ids: list[str], metric_ids: list[str]) -> np.ndarray:
    """Read ``dataset_id,metric_id,valid`` rows; unlisted cells default to valid."""
    valid = np.ones((len(dataset_ids), len(metric_ids)), dtype=bool)
    dpos = {d: i for i, d in enumerate(dataset_ids)}
    spos = {s: i for i, s in enumerate(metric_ids)}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            d, s = row["dataset_id"], row["metric_id"]
            if d not in dpos or s not in spos:
                raise DataError(f"{path}: unknown cell ({d}, {s})")
            flag = row["valid"].strip()
            if flag not in ("0", "1"):
                raise DataError(f"{path}: valid must be 0 or 1, got {flag!r}")
            valid[dpos[d], spos[s]] = flag == "1"
    return valid


def write_scores(t: ScoreTensor, path) -> None:
    """Write observed cells as long CSV (row-major over model, dataset, metric)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for m, n, s in zip(*np.nonzero(t.observed)):
            w.writerow([t.model_ids[m], t.dataset_ids[n], t.metric_ids[s],
                        repr(float(t.values[m, n, s]))])


def write_validity(t: ScoreTensor, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset_id", "metric_id", "valid"])
        for n, d in enumerate(t.dataset_ids):
            for s, mid in enumerate(t.metric_ids):
                w.writerow([d, mid, int(t.valid[n, s])])
