"""Experiment protocol: k-fold CV, grid search, subset sweep, cross-application,
downsampling, importance correlation, quantile bands and the binary task.

Imputation is always fitted inside the fold on training rows only; every
fold/grid unit derives a deterministic seed from the forest seed, so
results do not depend on scheduling or grid enumeration order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import (
    FeatureMatrix,
    default_catalog,
    subset_filter,
    fit_imputer,
    apply_imputer,
)
from .forest import ForestModel, ForestParams, fit_forest
from .metrics import macro_f1, r2_score, spearman_rho

SIX_CLASSES = (1, 2, 3, 4, 5, 6)

# binary windows paired with the cumulative feature subset of matching span
BINARY_WINDOW_SUBSETS = {
    "gt_1d": "firstDay",
    "gt_7d": "firstWeek",
    "gt_14d": "first2Weeks",
    "gt_1m": "firstMonth",
    "gt_3m": "first3Months",
}

# lifetime buckets for the quantile-band empirics (distinct from the six
# churn classes; both bucketings exist on purpose)
BAND_BUCKETS = [
    ("1d", 1440),
    ("3d", 4320),
    ("1w", 10080),
    ("2w", 20160),
    ("1m", 43830),
    ("3m", 131490),
    ("gt_3m", None),
]


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray  # row -> fold id

    def test_rows(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments == fold)[0]

    def train_rows(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments != fold)[0]


def kfold_split(n: int, k: int, seed: int) -> FoldPlan:
    """Seeded shuffle + contiguous chunks; first n % k folds get the extra row."""
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    if k < 2:
        raise ValueError("k must be >= 2")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    sizes = [n // k + (1 if f < n % k else 0) for f in range(k)]
    start = 0
    for f, size in enumerate(sizes):
        assignments[perm[start : start + size]] = f
        start += size
    return FoldPlan(k=k, seed=seed, assignments=assignments)


@dataclass
class ScoreSummary:
    metric: str
    per_fold: list[float]
    mean: float
    stddev: float  # population stddev over folds


def summarize(metric: str, scores) -> ScoreSummary:
    scores = [float(s) for s in scores]
    return ScoreSummary(metric, scores, float(np.mean(scores)), float(np.std(scores)))


def _fold_params(params: ForestParams, fold: int) -> ForestParams:
    seed = int(np.random.SeedSequence([params.seed, fold]).generate_state(1)[0])
    return replace(params, seed=seed)


def _score(task: str, y_true, y_pred, classes=None) -> float:
    if task == "regression":
        return r2_score(y_true, y_pred)
    return macro_f1(y_true, y_pred, classes=classes)


def _label_column(fm: FeatureMatrix, task: str, window: str | None = None):
    if task == "regression":
        return fm.labels["lifetime_min"], None
    if task == "binary":
        if window is None:
            raise ValueError("binary task needs a window id")
        return fm.labels[window], (0, 1)
    return fm.labels["class_id"], SIX_CLASSES


def cross_validate(fm: FeatureMatrix, params: ForestParams, plan: FoldPlan,
                   window: str | None = None, workers: int = 1) -> ScoreSummary:
    """Per-fold test scores; the imputer is fitted on each fold's training rows."""
    y, classes = _label_column(fm, params.task, window)
    scores = []
    for fold in range(plan.k):
        train = plan.train_rows(fold)
        test = plan.test_rows(fold)
        imputer = fit_imputer(fm.X, train, fm.columns)
        X_train = apply_imputer(imputer, fm.X[train])
        X_test = apply_imputer(imputer, fm.X[test])
        model = fit_forest(
            X_train, y[train], _fold_params(params, fold),
            feature_names=fm.columns, catalog_version=fm.catalog_version,
            workers=workers,
        )
        scores.append(_score(params.task, y[test], model.predict_batch(X_test), classes))
    metric = "r2" if params.task == "regression" else "macro_f1"
    return summarize(metric, scores)


@dataclass
class TrainedModel:
    model: ForestModel
    imputer: object

    def predict(self, fm: FeatureMatrix) -> np.ndarray:
        if fm.catalog_version != self.model.catalog_version:
            raise ValueError(
                f"catalog mismatch: model {self.model.catalog_version!r} "
                f"vs data {fm.catalog_version!r}"
            )
        return self.model.predict_batch(apply_imputer(self.imputer, fm.X))


def train_full(fm: FeatureMatrix, params: ForestParams, window: str | None = None,
               dataset_id: str = "", workers: int = 1) -> TrainedModel:
    """Fit imputer + forest on the entire matrix."""
    y, _ = _label_column(fm, params.task, window)
    imputer = fit_imputer(fm.X, np.arange(fm.X.shape[0]), fm.columns)
    model = fit_forest(
        apply_imputer(imputer, fm.X), y, params,
        feature_names=fm.columns, catalog_version=fm.catalog_version,
        dataset_id=dataset_id, workers=workers,
    )
    return TrainedModel(model=model, imputer=imputer)


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    table: list[tuple[ForestParams, ScoreSummary]]  # ranked, best first
    best: ForestParams

    def as_rows(self):
        return [
            {
                "n_estimators": p.n_estimators,
                "max_depth": p.max_depth,
                "max_features": p.max_features,
                "mean": s.mean,
                "stddev": s.stddev,
                "per_fold": s.per_fold,
            }
            for p, s in self.table
        ]


def grid_search(fm: FeatureMatrix, grid: list[ForestParams], plan: FoldPlan,
                window: str | None = None, workers: int = 1) -> GridResult:
    """Evaluate every grid point by CV; rank by mean score, ties to the
    simpler model (fewer estimators, then shallower)."""
    if not grid:
        raise ValueError("empty grid")
    evaluated = [(p, cross_validate(fm, p, plan, window, workers)) for p in grid]
    evaluated.sort(key=lambda e: (-e[1].mean, e[0].n_estimators, e[0].max_depth))
    return GridResult(table=evaluated, best=evaluated[0][0])


def feature_subset_sweep(fm: FeatureMatrix, subsets: list[str], params: ForestParams,
                         plan: FoldPlan, window: str | None = None,
                         workers: int = 1) -> dict[str, ScoreSummary]:
    """One CV run per cumulative feature subset; labels unchanged."""
    catalog = default_catalog()
    out = {}
    for subset in subsets:
        sub_fm = fm.restrict(subset_filter(catalog, subset))
        out[subset] = cross_validate(sub_fm, params, plan, window, workers)
    return out


# ---------------------------------------------------------------------------
# cross application


@dataclass
class CrossApplyMatrix:
    names: list[str]
    scores: np.ndarray  # model x dataset; diagonal = same-community CV mean

    def get(self, model_name: str, data_name: str) -> float:
        return float(self.scores[self.names.index(model_name), self.names.index(data_name)])


def cross_apply(models: dict[str, TrainedModel], datasets: dict[str, FeatureMatrix],
                diagonal: dict[str, float], task: str,
                window: str | None = None) -> CrossApplyMatrix:
    """Train-on-A predict-on-B scores; diagonal carries A's own CV mean."""
    names = list(models)
    if set(names) != set(datasets) or set(names) != set(diagonal):
        raise ValueError("models, datasets and diagonal must share the same keys")
    versions = {fm.catalog_version for fm in datasets.values()}
    versions |= {tm.model.catalog_version for tm in models.values()}
    if len(versions) != 1:
        raise ValueError(f"catalog_version mismatch across inputs: {sorted(versions)}")
    scores = np.empty((len(names), len(names)), dtype=np.float64)
    for i, mname in enumerate(names):
        for j, dname in enumerate(names):
            if mname == dname:
                scores[i, j] = diagonal[mname]
                continue
            fm = datasets[dname]
            y, classes = _label_column(fm, task, window)
            scores[i, j] = _score(task, y, models[mname].predict(fm), classes)
    return CrossApplyMatrix(names=names, scores=scores)


def downsample(fm: FeatureMatrix, n: int, seed: int) -> FeatureMatrix:
    """Uniform random row subset without replacement, seeded."""
    total = len(fm.user_ids)
    if n > total:
        raise ValueError(f"cannot downsample {total} rows to {n}")
    rows = np.sort(np.random.default_rng(seed).choice(total, size=n, replace=False))
    return fm.take_rows(rows)


def concat_matrices(parts: list[FeatureMatrix]) -> FeatureMatrix:
    """Row-wise pool of matrices sharing the same catalog."""
    if not parts:
        raise ValueError("nothing to concatenate")
    first = parts[0]
    for p in parts[1:]:
        if p.columns != first.columns or p.catalog_version != first.catalog_version:
            raise ValueError("matrices do not share a catalog")
    return FeatureMatrix(
        user_ids=[u for p in parts for u in p.user_ids],
        columns=first.columns,
        X=np.vstack([p.X for p in parts]),
        labels={
            k: np.concatenate([p.labels[k] for p in parts]) for k in first.labels
        },
        home=[h for p in parts for h in p.home],
        catalog_version=first.catalog_version,
    )


# ---------------------------------------------------------------------------
# importance correlation


def importance_correlation(models: dict[str, ForestModel]):
    """Pairwise Spearman rho of MDI importance vectors; diagonal 1."""
    names = list(models)
    features = {tuple(m.feature_names) for m in models.values()}
    if len(features) != 1:
        raise ValueError("models do not share a feature catalog")
    n = len(names)
    rho = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            r = spearman_rho(models[names[i]].importance, models[names[j]].importance)
            rho[i, j] = rho[j, i] = np.nan if r is None else r
    return names, rho


# ---------------------------------------------------------------------------
# quantile bands


@dataclass
class QuantileBands:
    feature: str
    buckets: list[str]
    quantiles: dict[str, np.ndarray]  # bucket -> deciles 10%..90%
    counts: dict[str, int]
    low_confidence: list[str] = field(default_factory=list)
    constant: bool = False

    @property
    def medians(self) -> dict[str, float]:
        return {b: float(q[4]) for b, q in self.quantiles.items()}


def _bucket_of(lifetime: float) -> str:
    for label, bound in BAND_BUCKETS:
        if bound is not None and lifetime <= bound:
            return label
    return BAND_BUCKETS[-1][0]


def quantile_bands(fm: FeatureMatrix, features: list[str] | None = None,
                   min_bucket_size: int = 10) -> dict[str, QuantileBands]:
    """Outlier-trimmed, min-max scaled per-lifetime-bucket deciles per feature."""
    if features is None:
        features = fm.columns
    lifetimes = fm.labels["lifetime_min"]
    bucket_labels = [b for b, _ in BAND_BUCKETS]
    row_bucket = np.asarray([_bucket_of(lt) for lt in lifetimes])
    deciles = np.arange(0.1, 0.91, 0.1)
    out = {}
    for name in features:
        col = fm.X[:, fm.columns.index(name)]
        keep = ~np.isnan(col)
        vals = col[keep]
        buckets_here = row_bucket[keep]
        constant = False
        if vals.size == 0:
            scaled = vals
        else:
            # order-statistic percentiles: interpolation must never trim the
            # extremes of a small sample
            lo = np.percentile(vals, 1, method="lower")
            hi = np.percentile(vals, 99, method="higher")
            inlier = (vals >= lo) & (vals <= hi)
            vals = vals[inlier]
            buckets_here = buckets_here[inlier]
            vmin, vmax = (vals.min(), vals.max()) if vals.size else (0.0, 0.0)
            if vmax == vmin:
                constant = True
                scaled = np.zeros_like(vals)
            else:
                scaled = (vals - vmin) / (vmax - vmin)
        quantiles, counts, low_conf = {}, {}, []
        for label in bucket_labels:
            sel = scaled[buckets_here == label]
            counts[label] = int(sel.size)
            if sel.size == 0:
                quantiles[label] = np.full(9, np.nan)
                low_conf.append(label)
                continue
            quantiles[label] = np.quantile(sel, deciles)
            if sel.size < min_bucket_size:
                low_conf.append(label)
        out[name] = QuantileBands(
            feature=name,
            buckets=bucket_labels,
            quantiles=quantiles,
            counts=counts,
            low_confidence=low_conf,
            constant=constant,
        )
    return out


# ---------------------------------------------------------------------------
# binary task sweep


def binary_sweep(fm: FeatureMatrix, params: ForestParams, plan: FoldPlan,
                 windows: list[str] | None = None,
                 workers: int = 1) -> dict[str, dict[str, ScoreSummary]]:
    """For each window: binary 'lifetime exceeds w' CV vs the six-class CV on
    the same cumulative feature subset and folds."""
    if windows is None:
        windows = list(BINARY_WINDOW_SUBSETS)
    catalog = default_catalog()
    out = {}
    for window in windows:
        subset = BINARY_WINDOW_SUBSETS[window]
        sub_fm = fm.restrict(subset_filter(catalog, subset))
        bin_params = replace(params, task="binary")
        clf_params = replace(params, task="multiclass")
        out[window] = {
            "binary": cross_validate(sub_fm, bin_params, plan, window, workers),
            "multiclass": cross_validate(sub_fm, clf_params, plan, None, workers),
            "subset": subset,
        }
    return out
