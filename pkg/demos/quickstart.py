"""Library walkthrough: generate a small log, extract features, evaluate.

Run from the repository root after installing the package:

    python demos/quickstart.py

Everything is seeded, so repeated runs print identical numbers.
"""

import numpy as np

from userlifetime import evaluation as ev
from userlifetime import events, features, synth
from userlifetime.forest import ForestParams

# 1. Generate a small synthetic community and label it.
config = synth.preset("tiny", seed=7)
log = synth.generate(config)
labels = events.label_log(log)
print(f"generated {len(log.users)} users, "
      f"{sum(len(u.events) for u in log.users.values())} events")
counts = np.bincount([lab.class_id for lab in labels], minlength=7)[1:]
print("class counts (1..6):", counts.tolist())

# 2. Extract the full windowed feature matrix.
fm = features.extract_matrix(log)
print(f"feature matrix: {len(fm.user_ids)} rows x {len(fm.columns)} columns")

# 3. Cross-validate a classification forest and a regression forest.
plan = ev.kfold_split(len(fm.user_ids), k=5, seed=7)
for task in ("multiclass", "regression"):
    params = ForestParams(n_estimators=16, max_depth=12, seed=7, task=task)
    summary = ev.cross_validate(fm, params, plan, window=None, workers=2)
    print(f"{task}: {summary.metric} = {summary.mean:.4f} +- {summary.stddev:.4f}")

# 4. How early can we predict? Sweep the cumulative window subsets.
params = ForestParams(n_estimators=16, max_depth=12, seed=7, task="multiclass")
sweep = ev.feature_subset_sweep(
    fm, ["community_only", "firstDay", "firstWeek", "all"], params, plan, workers=2)
for subset, summary in sweep.items():
    print(f"  {subset:>15}: macro F1 = {summary.mean:.4f}")

# 5. Train on everything and list the ten most important features.
trained = ev.train_full(fm, params, dataset_id="tiny", workers=2)
order = np.argsort(trained.model.importance)[::-1][:10]
print("top features by impurity-decrease importance:")
for rank, idx in enumerate(order, 1):
    name = trained.model.feature_names[idx]
    print(f"  {rank:2d}. {name:30s} {trained.model.importance[idx]:.4f}")
