"""Model and dataset profile matrices (H: M x K, G: N x J).

Oracle profiles one-hot encode K-Means clusters of complete score rows and
columns; custom profiles encode model feature files and cluster dataset
embedding vectors.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileSet:
    H: np.ndarray
    G: np.ndarray
    model_features: list[str]
    dataset_features: list[str]

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if H.shape[1] < 1 or G.shape[1] < 1:
            raise ProfileError("profiles need at least one column on each axis")
        if len(self.model_features) != H.shape[1] or len(self.dataset_features) != G.shape[1]:
            raise ProfileError("feature names do not match profile columns")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "G", G)

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def J(self) -> int:
        return self.G.shape[1]

    def save(self, directory, model_ids, dataset_ids) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _write_matrix(directory / "H.csv", "model_id", model_ids, self.model_features, self.H)
        _write_matrix(directory / "G.csv", "dataset_id", dataset_ids, self.dataset_features, self.G)


def _write_matrix(path, id_col, ids, names, mat):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_col, *names])
        for ident, row in zip(ids, mat):
            w.writerow([ident, *(repr(float(x)) for x in row)])


def _read_matrix(path, ids):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    table = {r[0]: [float(x) for x in r[1:]] for r in body}
    missing = [i for i in ids if i not in table]
    if missing:
        raise ProfileError(f"{path}: no row for ids {missing}")
    return np.array([table[i] for i in ids]), header[1:]


def load_profiles(directory, model_ids, dataset_ids, cluster_k=None, seed=0) -> ProfileSet:
    """Load ``H.csv``/``G.csv`` from a directory, or build custom profiles from
    ``model_features.csv`` and ``dataset_embeddings.csv`` found there."""
    directory = Path(directory)
    if (directory / "H.csv").exists() and (directory / "G.csv").exists():
        H, hn = _read_matrix(directory / "H.csv", model_ids)
        G, gn = _read_matrix(directory / "G.csv", dataset_ids)
        return ProfileSet(H, G, hn, gn)
    mf, de = directory / "model_features.csv", directory / "dataset_embeddings.csv"
    if mf.exists() and de.exists():
        return custom_profiles(mf, de, model_ids, dataset_ids, cluster_k=cluster_k, seed=seed)
    raise ProfileError(f"{directory}: expected H.csv+G.csv or model_features.csv+dataset_embeddings.csv")


# ---------------------------------------------------------------- k-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float]


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def _lloyd(X, C, max_iter):
    labels = None
    history = []
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        new_labels = d.argmin(axis=1)
        history.append(float(d[np.arange(len(X)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            return labels, C, history, it
        labels = new_labels
        C = C.copy()
        for j in range(C.shape[0]):
            members = X[labels == j]
            if len(members):  # empty clusters keep their centroid
                C[j] = members.mean(axis=0)
    d = _sq_dists(X, C)
    labels = d.argmin(axis=1)
    history.append(float(d[np.arange(len(X)), labels].sum()))
    return labels, C, history, max_iter


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts by inertia."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ProfileError("k-means needs at least one point")
    if not 1 <= k <= X.shape[0]:
        raise ProfileError(f"invalid k={k} for {X.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, C, hist, it = _lloyd(X, _kmeans_pp(X, k, rng), max_iter)
        res = KMeansResult(labels, C, hist[-1], it, hist)
        if best is None or res.inertia < best.inertia - 1e-12:
            best = res
    return best


def _n_distinct(X) -> int:
    return np.unique(np.round(np.asarray(X, dtype=float), 12), axis=0).shape[0]


def elbow_from_inertia(ks, inertias) -> int:
    """Interior k with the largest second difference of inertia; ties go to the smaller k."""
    ks = list(ks)
    inertias = list(inertias)
    if len(ks) < 3:
        raise ProfileError("elbow selection needs at least 3 candidate k values")
    curv = [(ks[i], (inertias[i - 1] - inertias[i]) - (inertias[i] - inertias[i + 1]))
            for i in range(1, len(ks) - 1)]
    best = max(c for _, c in curv)
    return min(k for k, c in curv if c >= best - 1e-12 * max(1.0, abs(best)))


def elbow_select(points, k_range=range(2, 11), seed: int = 0, n_init: int = 5) -> int:
    """Choose k by maximum curvature of the inertia curve.

    Inertia is evaluated on ``k_range`` widened by one on each side (clipped to
    what the data supports) so that the endpoints of the range are eligible.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    k_range = list(k_range)
    n_distinct = _n_distinct(X)
    ks = [k for k in range(min(k_range) - 1, max(k_range) + 2) if 1 <= k <= n_distinct]
    if len(ks) < 3:
        raise ProfileError(f"elbow selection needs at least 3 candidate k values, "
                           f"data with {n_distinct} distinct points allows {ks}")
    inertias = [kmeans(X, k, seed=seed, n_init=n_init).inertia for k in ks]
    interior = {k for k in k_range}
    curv = []
    for i in range(1, len(ks) - 1):
        if ks[i] in interior:
            curv.append((ks[i], (inertias[i - 1] - inertias[i]) - (inertias[i] - inertias[i + 1])))
    if not curv:
        raise ProfileError("no k in range has both neighbours evaluable")
    best = max(c for _, c in curv)
    return min(k for k, c in curv if c >= best - 1e-12 * max(1.0, abs(best)))


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    return (labels[:, None] == uniq[None, :]).astype(float)


def _cluster_one_hot(X, k=None, seed=0, k_range=range(2, 11)):
    n_distinct = _n_distinct(X)
    if k is None:
        if n_distinct <= 2:
            k = n_distinct
        else:
            k = elbow_select(X, [k for k in k_range if k < n_distinct] or [2], seed=seed)
    res = kmeans(X, k, seed=seed, n_init=5)
    # relabel clusters by first appearance so columns are reproducible
    order = {}
    for lab in res.labels:
        order.setdefault(int(lab), len(order))
    labels = np.array([order[int(lab)] for lab in res.labels])
    return one_hot(labels)


def oracle_profiles(full, seed: int = 0, k_range=range(2, 11)) -> ProfileSet:
    """One-hot cluster memberships of the rows (models) and columns (datasets)
    of a complete M x N score matrix."""
    R = np.asarray(full, dtype=float)
    if R.ndim != 2:
        raise ProfileError("oracle profiles need a 2-D (models x datasets) matrix")
    if not np.all(np.isfinite(R)):
        raise ProfileError("oracle profiles need a fully observed matrix")
    H = _cluster_one_hot(R, seed=seed, k_range=k_range)
    G = _cluster_one_hot(R.T, seed=seed, k_range=k_range)
    return ProfileSet(H, G, [f"model_cluster{k}" for k in range(H.shape[1])],
                      [f"dataset_cluster{j}" for j in range(G.shape[1])])


# ---------------------------------------------------------------- custom profiles

def _parse_number(text):
    try:
        return float(text)
    except ValueError:
        return None


def read_model_features(path) -> tuple[list[str], dict[str, dict], dict[str, str]]:
    """Parse a model feature file.

    Two layouts are accepted: a wide CSV whose header columns carry ``num:`` or
    ``cat:`` prefixes, or rows of ``model_id,key=value,...``. In the latter,
    a feature is numeric when all its values parse as numbers.
    Returns ``(model_ids, {model_id: {feature: value}}, {feature: "num"|"cat"})``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ProfileError(f"{path}: empty model feature file")
    header = [c.strip() for c in rows[0]]
    ids, table, kinds = [], {}, {}
    if header[0] == "model_id" and all(c.startswith(("num:", "cat:")) for c in header[1:]):
        names = [c.split(":", 1)[1] for c in header[1:]]
        for c, name in zip(header[1:], names):
            kinds[name] = c.split(":", 1)[0]
        for r in rows[1:]:
            if len(r) != len(header):
                raise ProfileError(f"{path}: ragged row for {r[0]!r}")
            ids.append(r[0].strip())
            table[ids[-1]] = dict(zip(names, (c.strip() for c in r[1:])))
    else:
        if header[0] == "model_id":
            rows = rows[1:]
        for r in rows:
            mid = r[0].strip()
            feats = {}
            for cell in r[1:]:
                if "=" not in cell:
                    raise ProfileError(f"{path}: expected key=value, got {cell!r}")
                k, v = cell.split("=", 1)
                feats[k.strip()] = v.strip()
            ids.append(mid)
            table[mid] = feats
        all_keys = []
        for feats in table.values():
            for k in feats:
                if k not in all_keys:
                    all_keys.append(k)
        for k in all_keys:
            vals = [f.get(k) for f in table.values() if k in f]
            kinds[k] = "num" if all(_parse_number(v) is not None for v in vals) else "cat"
    for k, kind in kinds.items():
        if kind == "num":
            for mid in ids:
                if _parse_number(table[mid].get(k, "")) is None:
                    raise ProfileError(f"{path}: numeric feature {k!r} missing or invalid for {mid!r}")
    return ids, table, kinds


def encode_model_features(path, model_ids) -> tuple[np.ndarray, list[str]]:
    """Standardized numeric columns followed by one-hot categorical columns."""
    ids, table, kinds = read_model_features(path)
    missing = [m for m in model_ids if m not in table]
    if missing:
        raise ProfileError(f"{path}: unknown or missing model ids {missing}")
    cols, names = [], []
    for k, kind in kinds.items():
        if kind == "num":
            x = np.array([float(table[m][k]) for m in model_ids])
            sd = x.std()
            cols.append((x - x.mean()) / sd if sd > 0 else np.zeros_like(x))
            names.append(k)
    for k, kind in kinds.items():
        if kind == "cat":
            vals = [table[m].get(k, "") for m in model_ids]
            levels = list(dict.fromkeys(vals))
            for lvl in levels:
                cols.append(np.array([1.0 if v == lvl else 0.0 for v in vals]))
                names.append(f"{k}={lvl}")
    if not cols:
        raise ProfileError(f"{path}: no features")
    return np.column_stack(cols), names


def read_embeddings(path, dataset_ids) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0].strip() == "dataset_id":
        rows = rows[1:]
    table = {}
    dim = None
    for r in rows:
        vec = [float(x) for x in r[1:]]
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise ProfileError(f"{path}: ragged embedding for {r[0]!r} ({len(vec)} != {dim})")
        table[r[0].strip()] = vec
    missing = [d for d in dataset_ids if d not in table]
    if missing:
        raise ProfileError(f"{path}: no embedding for dataset ids {missing}")
    return np.array([table[d] for d in dataset_ids])


def custom_profiles(model_features, dataset_embeddings, model_ids, dataset_ids,
                    cluster_k=None, seed: int = 0) -> ProfileSet:
    H, hn = encode_model_features(model_features, model_ids)
    E = read_embeddings(dataset_embeddings, dataset_ids)
    G = _cluster_one_hot(E, k=cluster_k, seed=seed)
    return ProfileSet(H, G, hn, [f"embedding_cluster{j}" for j in range(G.shape[1])])
