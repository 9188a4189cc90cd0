"""Independent reference implementations used to check the fast code paths.

Everything here is written for clarity, not speed: exhaustive split search
over explicit masks and a plain recursive tree grower.
"""

import numpy as np

from userlifetime.forest import MIN_IMPURITY_DECREASE, TIE_EPSILON, best_split


def _impurity(y, criterion):
    y = np.asarray(y)
    if criterion == "variance":
        return float(np.var(y.astype(np.float64)))
    _, counts = np.unique(y, return_counts=True)
    p = counts / counts.sum()
    return float(1.0 - np.sum(p * p))


def brute_best_split(X, y, criterion):
    """Exhaustive split search with explicit boolean masks.

    Scans features in ascending index order and thresholds in ascending
    value order, keeping the first strictly better decrease, which encodes
    the tie rule 'lowest feature index, then lowest threshold'.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    parent = _impurity(y, criterion)
    best = None
    best_dec = MIN_IMPURITY_DECREASE
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for i in range(vals.size - 1):
            thr = (vals[i] + vals[i + 1]) / 2.0
            mask = X[:, f] <= thr
            nl = int(mask.sum())
            dec = parent - (
                nl * _impurity(y[mask], criterion)
                + (n - nl) * _impurity(y[~mask], criterion)
            ) / n
            if dec > best_dec + TIE_EPSILON:
                best_dec = dec
                best = {"feature": f, "threshold": thr, "decrease": dec}
    return best


def grow_reference_tree(X, y, criterion, max_depth, depth=0):
    """Plain recursive CART using best_split; mirrors the fast kernel at
    min_samples_leaf=1 with all features considered."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if (
        depth >= max_depth
        or len(y) < 2
        or _impurity(y, criterion) <= MIN_IMPURITY_DECREASE
    ):
        return {"leaf": _leaf_value(y, criterion)}
    split = best_split(X, y, criterion=criterion)
    if split is None:
        return {"leaf": _leaf_value(y, criterion)}
    mask = X[:, split["feature"]] <= split["threshold"]
    return {
        "feature": split["feature"],
        "threshold": split["threshold"],
        "left": grow_reference_tree(X[mask], y[mask], criterion, max_depth, depth + 1),
        "right": grow_reference_tree(X[~mask], y[~mask], criterion, max_depth, depth + 1),
    }


def _leaf_value(y, criterion):
    if criterion == "variance":
        return float(np.mean(y))
    classes, counts = np.unique(y, return_counts=True)
    return classes[np.argmax(counts)]  # first max = lowest class on ties


def reference_predict(tree, x):
    node = tree
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]
