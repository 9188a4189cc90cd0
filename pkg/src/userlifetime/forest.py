"""CART trees and random-forest ensembles for regression, multiclass and binary tasks.

Trees are stored as flat arrays (feature, threshold, children, leaf values),
which keeps fitting numba-friendly and serialization trivial. Determinism
contract: identical (data, params.seed) gives bit-identical trees no matter
how many workers fit them, because every tree derives its own seed from
(master seed, tree index) and aggregation is ordered by tree index.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

MIN_IMPURITY_DECREASE = 1e-12

# a later candidate must beat the incumbent by more than this; keeps the
# declared tie rule (lowest feature, then lowest threshold) stable when two
# splits induce the same partition and differ only by float summation order
TIE_EPSILON = 1e-12

TASKS = ("regression", "multiclass", "binary")


def gini_impurity(counts) -> float:
    """1 - sum(p_k^2) over class proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("negative counts")
    total = counts.sum()
    if total == 0:
        raise ValueError("all-zero counts")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def variance_impurity(values) -> float:
    """Population variance of the values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no values")
    return float(np.var(values))


def _impurity(y, criterion):
    if criterion == "variance":
        return variance_impurity(y)
    classes, counts = np.unique(y, return_counts=True)
    return gini_impurity(counts)


def best_split(X, y, candidates=None, criterion="gini"):
    """Exhaustive best (feature, threshold) by weighted impurity decrease.

    Thresholds are midpoints between consecutive distinct sorted values.
    Ties break to the lowest feature index, then the lowest threshold.
    Returns None when no split decreases impurity.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows")
    if candidates is None:
        candidates = range(X.shape[1])
    candidates = sorted(candidates)
    if not candidates:
        raise ValueError("empty candidate set")

    parent = _impurity(y, criterion)
    best = None
    best_dec = MIN_IMPURITY_DECREASE
    for f in candidates:
        order = np.argsort(X[:, f], kind="mergesort")
        xs = X[order, f]
        ys = y[order]
        for i in range(n - 1):
            if xs[i] == xs[i + 1]:
                continue
            thr = (xs[i] + xs[i + 1]) / 2.0
            nl = i + 1
            dec = parent - (
                nl * _impurity(ys[:nl], criterion) + (n - nl) * _impurity(ys[nl:], criterion)
            ) / n
            if dec > best_dec + TIE_EPSILON:
                best_dec = dec
                best = {"feature": f, "threshold": thr, "decrease": dec}
    return best


# ---------------------------------------------------------------------------
# numba tree kernel


@njit(cache=True, nogil=True)
def _grow_tree(X, y, K, is_reg, max_depth, min_samples_leaf, max_feats, seed):
    n, F = X.shape
    max_nodes = 2 * n
    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    count = np.zeros(max_nodes, np.int32)
    vdim = 1 if is_reg else K
    value = np.zeros((max_nodes, vdim), np.float64)
    imp_dec = np.zeros(F, np.float64)

    np.random.seed(seed)
    idx = np.arange(n)
    tmp = np.empty(n, np.int64)
    featbuf = np.empty(F, np.int64)
    stack = np.empty((max_nodes, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    lcnt = np.zeros(K, np.float64)
    tcnt = np.zeros(K, np.float64)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        count[node] = m

        if is_reg:
            s = 0.0
            ss = 0.0
            for i in range(start, end):
                v = y[idx[i]]
                s += v
                ss += v * v
            mean = s / m
            imp = ss / m - mean * mean
            if imp < 0.0:
                imp = 0.0
            value[node, 0] = mean
        else:
            for k in range(K):
                tcnt[k] = 0.0
            for i in range(start, end):
                tcnt[int(y[idx[i]])] += 1.0
            imp = 1.0
            for k in range(K):
                p = tcnt[k] / m
                imp -= p * p
                value[node, k] = p

        if depth >= max_depth or m < 2 * min_samples_leaf or imp <= 1e-12:
            continue

        nf = max_feats if max_feats < F else F
        for j in range(F):
            featbuf[j] = j
        if nf < F:
            for j in range(nf):
                r = j + np.random.randint(0, F - j)
                t = featbuf[j]
                featbuf[j] = featbuf[r]
                featbuf[r] = t
            cand = np.sort(featbuf[:nf])
        else:
            cand = featbuf[:F]

        best_dec = MIN_IMPURITY_DECREASE
        best_f = -1
        best_t = 0.0
        vals = np.empty(m, np.float64)

        for c in range(nf):
            f = cand[c]
            for i in range(m):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals)
            if is_reg:
                tsum = 0.0
                tss = 0.0
                for i in range(m):
                    v = y[idx[start + order[i]]]
                    tsum += v
                    tss += v * v
                ls = 0.0
                lss = 0.0
                for i in range(m - 1):
                    v = y[idx[start + order[i]]]
                    ls += v
                    lss += v * v
                    x0 = vals[order[i]]
                    x1 = vals[order[i + 1]]
                    if x0 == x1:
                        continue
                    nl = i + 1
                    nr = m - nl
                    if nl < min_samples_leaf or nr < min_samples_leaf:
                        continue
                    lmean = ls / nl
                    rmean = (tsum - ls) / nr
                    limp = lss / nl - lmean * lmean
                    rimp = (tss - lss) / nr - rmean * rmean
                    if limp < 0.0:
                        limp = 0.0
                    if rimp < 0.0:
                        rimp = 0.0
                    dec = imp - (nl * limp + nr * rimp) / m
                    if dec > best_dec + TIE_EPSILON:
                        best_dec = dec
                        best_f = f
                        best_t = (x0 + x1) / 2.0
            else:
                for k in range(K):
                    lcnt[k] = 0.0
                for i in range(m - 1):
                    lcnt[int(y[idx[start + order[i]]])] += 1.0
                    x0 = vals[order[i]]
                    x1 = vals[order[i + 1]]
                    if x0 == x1:
                        continue
                    nl = i + 1
                    nr = m - nl
                    if nl < min_samples_leaf or nr < min_samples_leaf:
                        continue
                    limp = 1.0
                    rimp = 1.0
                    for k in range(K):
                        pl = lcnt[k] / nl
                        pr = (tcnt[k] - lcnt[k]) / nr
                        limp -= pl * pl
                        rimp -= pr * pr
                    dec = imp - (nl * limp + nr * rimp) / m
                    if dec > best_dec + TIE_EPSILON:
                        best_dec = dec
                        best_f = f
                        best_t = (x0 + x1) / 2.0

        if best_f < 0:
            continue

        # stable partition of idx[start:end] on the chosen split
        p = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_t:
                tmp[p] = idx[i]
                p += 1
        q = p
        for i in range(start, end):
            if X[idx[i], best_f] > best_t:
                tmp[q] = idx[i]
                q += 1
        for i in range(m):
            idx[start + i] = tmp[i]

        feat[node] = best_f
        thr[node] = best_t
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        imp_dec[best_f] += (m / n) * best_dec

        stack[top, 0] = rchild
        stack[top, 1] = start + p
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lchild
        stack[top, 1] = start
        stack[top, 2] = start + p
        stack[top, 3] = depth + 1
        top += 1

    return (
        feat[:n_nodes],
        thr[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        count[:n_nodes],
        value[:n_nodes],
        imp_dec,
    )


@njit(cache=True, nogil=True)
def _accumulate_tree(X, feat, thr, left, right, value, out):
    n = X.shape[0]
    vdim = value.shape[1]
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        for k in range(vdim):
            out[i, k] += value[node, k]


# ---------------------------------------------------------------------------
# forest


@dataclass
class ForestParams:
    n_estimators: int
    max_depth: int
    seed: int
    task: str = "multiclass"
    max_features: str | float = "all"
    min_samples_leaf: int = 1
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators, max_depth and min_samples_leaf must be >= 1")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.seed is None:
            raise ValueError("seed is mandatory")

    def resolve_max_features(self, n_features: int) -> int:
        if self.max_features == "all":
            return n_features
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        frac = float(self.max_features)
        if not 0 < frac <= 1:
            raise ValueError("max_features fraction must be in (0, 1]")
        return max(1, int(round(frac * n_features)))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    value: np.ndarray


@dataclass
class ForestModel:
    params: ForestParams
    feature_names: list[str]
    trees: list[Tree]
    importance: np.ndarray
    classes: np.ndarray | None = None  # None for regression
    catalog_version: str = ""
    dataset_id: str = ""

    @property
    def is_regression(self) -> bool:
        return self.params.task == "regression"

    def predict_batch(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got shape {X.shape}"
            )
        vdim = 1 if self.is_regression else len(self.classes)
        acc = np.zeros((X.shape[0], vdim), dtype=np.float64)
        for tree in self.trees:
            _accumulate_tree(
                X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, acc
            )
        acc /= len(self.trees)
        if self.is_regression:
            return acc[:, 0]
        # argmax takes the first maximum, i.e. the lowest class id on ties
        return self.classes[np.argmax(acc, axis=1)]

    def predict(self, x):
        return self.predict_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def _tree_seed(master: int, tree_idx: int, stream: int) -> int:
    return int(np.random.SeedSequence([master, tree_idx, stream]).generate_state(1)[0])


def _fit_one_tree(X, y_enc, K, params: ForestParams, max_feats, t):
    n = X.shape[0]
    if params.bootstrap:
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, t, 1]))
        sample = rng.integers(0, n, n)
        Xs = np.ascontiguousarray(X[sample])
        ys = y_enc[sample]
    else:
        Xs, ys = X, y_enc
    out = _grow_tree(
        Xs,
        ys,
        K,
        params.task == "regression",
        params.max_depth,
        params.min_samples_leaf,
        max_feats,
        _tree_seed(params.seed, t, 2),
    )
    feat, thr, left, right, count, value, imp = out
    return Tree(feat.copy(), thr.copy(), left.copy(), right.copy(), count.copy(), value.copy()), imp


def fit_forest(X, y, params: ForestParams, feature_names=None, catalog_version="",
               dataset_id="", workers: int = 1) -> ForestModel:
    """Fit a seeded forest. `workers` only parallelizes tree fitting and
    never changes any output value."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.size == 0 or y.size == 0:
        raise ValueError("empty training data")
    if X.shape[0] != y.shape[0]:
        raise ValueError("row count mismatch between matrix and labels")
    if np.isnan(X).any():
        raise ValueError("matrix contains missing values; impute before fitting")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length mismatch")

    if params.task == "regression":
        classes = None
        y_enc = np.ascontiguousarray(y, dtype=np.float64)
        K = 1
    else:
        classes = np.unique(y)
        if params.task == "binary" and classes.size > 2:
            raise ValueError("binary task with more than 2 label values")
        if classes.size == 1:
            warnings.warn("single-class training labels; model is a constant predictor")
        y_enc = np.ascontiguousarray(np.searchsorted(classes, y), dtype=np.float64)
        K = int(classes.size)

    max_feats = params.resolve_max_features(X.shape[1])
    indices = range(params.n_estimators)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda t: _fit_one_tree(X, y_enc, K, params, max_feats, t), indices
            ))
    else:
        results = [_fit_one_tree(X, y_enc, K, params, max_feats, t) for t in indices]

    trees = [r[0] for r in results]
    # ordered reduction keeps float results independent of scheduling
    total = np.zeros(X.shape[1], dtype=np.float64)
    for _, imp in results:
        total += imp
    norm = total.sum()
    importance = total / norm if norm > 0 else total

    return ForestModel(
        params=params,
        feature_names=list(feature_names),
        trees=trees,
        importance=importance,
        classes=classes,
        catalog_version=catalog_version,
        dataset_id=dataset_id,
    )


def feature_importance(model: ForestModel) -> np.ndarray:
    """Normalized mean-decrease-in-impurity vector (sums to 1, or all 0)."""
    return model.importance


# ---------------------------------------------------------------------------
# dummy baselines


@dataclass
class BaselineModel:
    task: str
    value: float

    def predict_batch(self, X) -> np.ndarray:
        n = np.asarray(X).shape[0]
        if self.task == "regression":
            return np.full(n, self.value, dtype=np.float64)
        return np.full(n, self.value)


def fit_baseline(task: str, y) -> BaselineModel:
    """Mean predictor for regression, most-frequent class otherwise (ties: lowest id)."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty labels")
    if task == "regression":
        return BaselineModel(task, float(y.mean()))
    classes, counts = np.unique(y, return_counts=True)
    return BaselineModel(task, classes[np.argmax(counts)])


# ---------------------------------------------------------------------------
# serialization

MODEL_FORMAT_VERSION = 1


def model_to_dict(model: ForestModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "params": {
            "n_estimators": model.params.n_estimators,
            "max_depth": model.params.max_depth,
            "seed": model.params.seed,
            "task": model.params.task,
            "max_features": model.params.max_features,
            "min_samples_leaf": model.params.min_samples_leaf,
            "bootstrap": model.params.bootstrap,
        },
        "feature_names": model.feature_names,
        "catalog_version": model.catalog_version,
        "dataset_id": model.dataset_id,
        "classes": None if model.classes is None else model.classes.tolist(),
        "importance": model.importance.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "n_samples": t.n_samples.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }


def model_from_dict(doc: dict) -> ForestModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {doc.get('format_version')!r}")
    params = ForestParams(**doc["params"])
    trees = [
        Tree(
            np.asarray(t["feature"], dtype=np.int32),
            np.asarray(t["threshold"], dtype=np.float64),
            np.asarray(t["left"], dtype=np.int32),
            np.asarray(t["right"], dtype=np.int32),
            np.asarray(t["n_samples"], dtype=np.int32),
            np.asarray(t["value"], dtype=np.float64),
        )
        for t in doc["trees"]
    ]
    classes = doc["classes"]
    return ForestModel(
        params=params,
        feature_names=doc["feature_names"],
        trees=trees,
        importance=np.asarray(doc["importance"], dtype=np.float64),
        classes=None if classes is None else np.asarray(classes),
        catalog_version=doc.get("catalog_version", ""),
        dataset_id=doc.get("dataset_id", ""),
    )


def save_model(model: ForestModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> ForestModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
