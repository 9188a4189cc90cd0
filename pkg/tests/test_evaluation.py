"""Cross-validation protocol, grid search, cross-application and bands."""

import numpy as np
import pytest

from userlifetime import evaluation as ev
from userlifetime import features as ft
from userlifetime.forest import ForestParams


def make_fm(X, lifetimes, catalog_version="catalog-v1", home=None):
    """Small hand-built matrix with labels derived from the lifetimes."""
    from userlifetime.events import binary_flags, lifetime_class

    X = np.asarray(X, dtype=np.float64)
    lifetimes = np.asarray(lifetimes)
    n = X.shape[0]
    labels = {
        "lifetime_min": lifetimes,
        "class_id": np.array([lifetime_class(int(v)) for v in lifetimes]),
        "churn7": np.zeros(n, dtype=np.int64),
    }
    for w in ("gt_1d", "gt_7d", "gt_14d", "gt_1m", "gt_3m"):
        labels[w] = np.array([int(binary_flags(int(v))[w]) for v in lifetimes])
    return ft.FeatureMatrix(
        user_ids=[f"u{i}" for i in range(n)],
        columns=[f"f{j}" for j in range(X.shape[1])],
        X=X,
        labels=labels,
        home=home or ["x"] * n,
        catalog_version=catalog_version,
    )


def planted_fm(n=120, seed=0):
    """Feature 0 determines the lifetime; feature 1 is noise."""
    rng = np.random.default_rng(seed)
    f0 = rng.uniform(0, 1, size=n)
    noise = rng.normal(size=n)
    lifetimes = (f0 * 200_000).astype(np.int64)
    return make_fm(np.column_stack([f0, noise]), lifetimes)


PARAMS_REG = ForestParams(8, 8, seed=1, task="regression")
PARAMS_CLF = ForestParams(8, 8, seed=1, task="multiclass")


class TestKfold:
    def test_even_split(self):
        plan = ev.kfold_split(10, 5, seed=0)
        assert [plan.test_rows(f).size for f in range(5)] == [2] * 5

    def test_remainder_goes_to_first_folds(self):
        plan = ev.kfold_split(11, 5, seed=0)
        assert [plan.test_rows(f).size for f in range(5)] == [3, 2, 2, 2, 2]

    def test_partition_is_exact(self):
        plan = ev.kfold_split(23, 4, seed=3)
        all_rows = np.concatenate([plan.test_rows(f) for f in range(4)])
        assert sorted(all_rows.tolist()) == list(range(23))
        for f in range(4):
            assert set(plan.test_rows(f)).isdisjoint(plan.train_rows(f))

    def test_deterministic_and_seed_sensitive(self):
        a = ev.kfold_split(30, 5, seed=7)
        b = ev.kfold_split(30, 5, seed=7)
        c = ev.kfold_split(30, 5, seed=8)
        assert np.array_equal(a.assignments, b.assignments)
        assert not np.array_equal(a.assignments, c.assignments)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            ev.kfold_split(3, 5, seed=0)
        with pytest.raises(ValueError):
            ev.kfold_split(10, 1, seed=0)


class TestSummaries:
    def test_population_stddev(self):
        s = ev.summarize("r2", [1.0, 2.0, 3.0])
        assert s.mean == pytest.approx(2.0)
        assert s.stddev == pytest.approx(np.sqrt(2.0 / 3.0))


class TestCrossValidate:
    def test_planted_regression_signal_is_recovered(self):
        fm = planted_fm()
        plan = ev.kfold_split(len(fm.user_ids), 5, seed=2)
        summary = ev.cross_validate(fm, PARAMS_REG, plan)
        assert summary.metric == "r2"
        assert summary.mean > 0.9
        assert len(summary.per_fold) == 5

    def test_deterministic(self):
        fm = planted_fm()
        plan = ev.kfold_split(len(fm.user_ids), 5, seed=2)
        a = ev.cross_validate(fm, PARAMS_CLF, plan)
        b = ev.cross_validate(fm, PARAMS_CLF, plan)
        assert a.per_fold == b.per_fold

    def test_workers_do_not_change_scores(self):
        fm = planted_fm(seed=5)
        plan = ev.kfold_split(len(fm.user_ids), 4, seed=2)
        a = ev.cross_validate(fm, PARAMS_CLF, plan, workers=1)
        b = ev.cross_validate(fm, PARAMS_CLF, plan, workers=4)
        assert a.per_fold == b.per_fold

    def test_binary_needs_window(self):
        fm = planted_fm()
        plan = ev.kfold_split(len(fm.user_ids), 4, seed=2)
        params = ForestParams(2, 3, seed=0, task="binary")
        with pytest.raises(ValueError, match="window"):
            ev.cross_validate(fm, params, plan)
        summary = ev.cross_validate(fm, params, plan, window="gt_7d")
        assert summary.metric == "macro_f1"

    def test_missing_values_are_imputed_per_fold(self):
        fm = planted_fm()
        fm.X[::7, 1] = np.nan
        plan = ev.kfold_split(len(fm.user_ids), 4, seed=2)
        summary = ev.cross_validate(fm, PARAMS_REG, plan)
        assert summary.mean > 0.85


class TestNoLeakage:
    def test_perturbing_test_rows_changes_nothing_fitted(self):
        from userlifetime.forest import fit_forest, model_to_dict

        fm = planted_fm(seed=9)
        fm.X[::5, 1] = np.nan
        plan = ev.kfold_split(len(fm.user_ids), 5, seed=4)
        train, test = plan.train_rows(0), plan.test_rows(0)

        def fit(matrix):
            imputer = ft.fit_imputer(matrix, train, fm.columns)
            model = fit_forest(
                ft.apply_imputer(imputer, matrix[train]),
                fm.labels["lifetime_min"][train],
                ForestParams(4, 6, seed=3, task="regression"),
            )
            return imputer.means.tobytes(), model_to_dict(model)

        means_a, model_a = fit(fm.X)
        perturbed = fm.X.copy()
        perturbed[test] = perturbed[test] * 3.0 + 1.0
        perturbed[test[0], 1] = np.nan
        means_b, model_b = fit(perturbed)
        assert means_a == means_b
        assert model_a == model_b


class TestGridSearch:
    def test_ranked_by_mean_then_simplicity(self):
        fm = planted_fm()
        plan = ev.kfold_split(len(fm.user_ids), 4, seed=2)
        grid = [
            ForestParams(2, 4, seed=1, task="regression"),
            ForestParams(8, 8, seed=1, task="regression"),
        ]
        result = ev.grid_search(fm, grid, plan)
        means = [s.mean for _, s in result.table]
        assert means == sorted(means, reverse=True)

    def test_enumeration_order_does_not_matter(self):
        fm = planted_fm()
        plan = ev.kfold_split(len(fm.user_ids), 4, seed=2)
        grid = [
            ForestParams(n, d, seed=1, task="regression")
            for n in (2, 4) for d in (3, 6)
        ]
        fwd = ev.grid_search(fm, grid, plan)
        rev = ev.grid_search(fm, list(reversed(grid)), plan)
        assert fwd.best == rev.best
        assert [p for p, _ in fwd.table] == [p for p, _ in rev.table]

    def test_exact_tie_prefers_fewer_estimators(self):
        # constant features make every configuration score identically
        fm = make_fm(np.ones((20, 2)), np.full(20, 500))
        plan = ev.kfold_split(20, 4, seed=0)
        grid = [
            ForestParams(8, 4, seed=1, task="regression"),
            ForestParams(2, 4, seed=1, task="regression"),
        ]
        result = ev.grid_search(fm, grid, plan)
        assert result.best.n_estimators == 2

    def test_empty_grid_rejected(self):
        fm = planted_fm()
        with pytest.raises(ValueError):
            ev.grid_search(fm, [], ev.kfold_split(len(fm.user_ids), 4, seed=2))


class TestCrossApply:
    def test_matrix_layout_and_diagonal(self, tiny_fm):
        homes = np.asarray(tiny_fm.home)
        parts = {
            name: tiny_fm.take_rows(np.nonzero(homes == name)[0])
            for name in sorted(set(tiny_fm.home))
        }
        params = ForestParams(4, 6, seed=2, task="multiclass", max_features="sqrt")
        models, diag = {}, {}
        for name, fm in parts.items():
            models[name] = ev.train_full(fm, params, dataset_id=name)
            diag[name] = ev.cross_validate(
                fm, params, ev.kfold_split(len(fm.user_ids), 3, seed=1)
            ).mean
        matrix = ev.cross_apply(models, parts, diag, "multiclass")
        assert matrix.scores.shape == (len(parts), len(parts))
        for name in parts:
            assert matrix.get(name, name) == pytest.approx(diag[name])
        assert np.all(matrix.scores >= 0) and np.all(matrix.scores <= 1)

    def test_key_mismatch_rejected(self, tiny_fm):
        params = ForestParams(2, 3, seed=0, task="multiclass")
        tm = ev.train_full(tiny_fm, params)
        with pytest.raises(ValueError, match="keys"):
            ev.cross_apply({"a": tm}, {"b": tiny_fm}, {"a": 0.5}, "multiclass")

    def test_catalog_mismatch_rejected(self):
        fm_a = planted_fm()
        fm_b = planted_fm(seed=1)
        fm_b.catalog_version = "catalog-v2"
        params = ForestParams(2, 3, seed=0, task="regression")
        models = {"a": ev.train_full(fm_a, params), "b": ev.train_full(fm_b, params)}
        with pytest.raises(ValueError, match="catalog"):
            ev.cross_apply(models, {"a": fm_a, "b": fm_b}, {"a": 0.0, "b": 0.0}, "regression")

    def test_trained_model_checks_catalog(self):
        fm = planted_fm()
        tm = ev.train_full(fm, ForestParams(2, 3, seed=0, task="regression"))
        other = planted_fm(seed=1)
        other.catalog_version = "catalog-v9"
        with pytest.raises(ValueError, match="catalog"):
            tm.predict(other)


class TestDownsample:
    def test_identity_at_full_size(self):
        fm = planted_fm(n=30)
        assert ev.downsample(fm, 30, seed=0).user_ids == fm.user_ids

    def test_seeded_and_without_replacement(self):
        fm = planted_fm(n=30)
        a = ev.downsample(fm, 10, seed=4)
        b = ev.downsample(fm, 10, seed=4)
        assert a.user_ids == b.user_ids
        assert len(set(a.user_ids)) == 10

    def test_oversampling_rejected(self):
        with pytest.raises(ValueError):
            ev.downsample(planted_fm(n=10), 11, seed=0)


class TestConcat:
    def test_row_pooling(self):
        a, b = planted_fm(n=10), planted_fm(n=15, seed=2)
        pooled = ev.concat_matrices([a, b])
        assert len(pooled.user_ids) == 25
        assert np.array_equal(pooled.X[:10], a.X)
        assert np.array_equal(pooled.labels["class_id"][10:], b.labels["class_id"])

    def test_catalog_mismatch_rejected(self):
        a, b = planted_fm(n=10), planted_fm(n=10)
        b.catalog_version = "other"
        with pytest.raises(ValueError):
            ev.concat_matrices([a, b])


class TestImportanceCorrelation:
    def test_identical_models_correlate_perfectly(self):
        from userlifetime.forest import fit_forest

        fm = planted_fm()
        model = fit_forest(np.nan_to_num(fm.X), fm.labels["class_id"],
                           ForestParams(4, 5, seed=0))
        names, rho = ev.importance_correlation({"a": model, "b": model})
        assert names == ["a", "b"]
        assert rho[0, 1] == pytest.approx(1.0)
        assert rho[0, 0] == 1.0

    def test_mismatched_feature_names_rejected(self):
        from userlifetime.forest import fit_forest

        fm = planted_fm()
        m1 = fit_forest(fm.X, fm.labels["class_id"], ForestParams(2, 3, seed=0),
                        feature_names=["a", "b"])
        m2 = fit_forest(fm.X, fm.labels["class_id"], ForestParams(2, 3, seed=0),
                        feature_names=["a", "c"])
        with pytest.raises(ValueError):
            ev.importance_correlation({"x": m1, "y": m2})


class TestQuantileBands:
    def test_bucket_boundaries_and_deciles(self):
        lifetimes = np.array([100, 1440, 1441, 4320, 5000, 200_000])
        X = np.arange(6, dtype=float).reshape(-1, 1) * 10
        fm = make_fm(X, lifetimes)
        bands = ev.quantile_bands(fm, ["f0"], min_bucket_size=2)["f0"]
        assert bands.counts["1d"] == 2  # the boundary value belongs below
        assert bands.counts["3d"] == 2
        assert bands.counts["1w"] == 1
        assert bands.counts["gt_3m"] == 1
        assert "1w" in bands.low_confidence
        for q in bands.quantiles.values():
            finite = q[~np.isnan(q)]
            assert np.all(finite >= 0) and np.all(finite <= 1)

    def test_decile_values_match_numpy(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(10, 20, size=200)
        fm = make_fm(vals.reshape(-1, 1), np.full(200, 500))
        band = ev.quantile_bands(fm, ["f0"])["f0"]
        lo = np.percentile(vals, 1, method="lower")
        hi = np.percentile(vals, 99, method="higher")
        inlier = vals[(vals >= lo) & (vals <= hi)]
        scaled = (inlier - inlier.min()) / (inlier.max() - inlier.min())
        assert np.allclose(band.quantiles["1d"], np.quantile(scaled, np.arange(0.1, 0.91, 0.1)))

    def test_constant_feature_is_flagged(self):
        fm = make_fm(np.ones((20, 1)), np.full(20, 500))
        band = ev.quantile_bands(fm, ["f0"])["f0"]
        assert band.constant is True
        assert np.all(band.quantiles["1d"] == 0.0)

    def test_missing_values_are_ignored(self):
        X = np.array([[1.0], [np.nan], [3.0], [np.nan]])
        fm = make_fm(X, np.full(4, 500))
        band = ev.quantile_bands(fm, ["f0"])["f0"]
        assert band.counts["1d"] == 2


class TestBinarySweep:
    def test_every_window_reports_both_tasks(self, tiny_fm):
        params = ForestParams(4, 6, seed=2, max_features="sqrt")
        plan = ev.kfold_split(len(tiny_fm.user_ids), 3, seed=1)
        out = ev.binary_sweep(tiny_fm, params, plan, windows=["gt_1d", "gt_7d"])
        assert set(out) == {"gt_1d", "gt_7d"}
        assert out["gt_7d"]["subset"] == "firstWeek"
        for r in out.values():
            assert 0.0 <= r["binary"].mean <= 1.0
            assert 0.0 <= r["multiclass"].mean <= 1.0
