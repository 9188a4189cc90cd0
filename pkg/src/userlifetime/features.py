"""Feature catalog, windowed extraction and train-fold mean imputation.

Every user base metric exists once as a whole-observation column and once
per time window, with windows anchored at the user's registration. Metrics
that are undefined for a user (no second post, never posted, ...) extract
as missing rather than 0, so mean imputation can distinguish absence from
zero activity.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .events import (
    BINARY_WINDOWS,
    MINUTES_PER_DAY,
    MINUTES_PER_MONTH,
    MINUTES_PER_3_MONTHS,
    EventLog,
    UserRecord,
    home_community,
    label_user,
)

CATALOG_VERSION = "catalog-v1"

# (id, upper bound in minutes relative to registration; None = unbounded)
WINDOWS: list[tuple[str, int | None]] = [
    ("d1", MINUTES_PER_DAY),
    ("d2", 2 * MINUTES_PER_DAY),
    ("d3", 3 * MINUTES_PER_DAY),
    ("w1", 7 * MINUTES_PER_DAY),
    ("w2", 14 * MINUTES_PER_DAY),
    ("m1", MINUTES_PER_MONTH),
    ("m3", MINUTES_PER_3_MONTHS),
    ("gt_m3", None),  # realized as the unbounded window; equals `all` for counts
    ("all", None),
]
WINDOW_BOUNDS = dict(WINDOWS)

USER_METRICS = [
    "postcreated",
    "replycreated",
    "upvotes",
    "downvotes",
    "flags",
    "picture_posts",
    "postcreated_day",
    "replycreated_day",
    "replies_day",
    "picture_posts_day",
    "min_btwn_posts",
    "min_btwn_intrctns",
    "RegPostGap_h",
]

# known at registration time, so part of every windowed subset
REGISTRATION_METRICS = ["karma", "reg_weekday", "reg_hour"]

COMMUNITY_METRICS = [
    "community_posts",
    "community_replies",
    "community_upvotes",
    "community_downvotes",
    "community_active_users",
    "community_avg_response_time",
]

SUBSET_WINDOWS = {
    "firstDay": ["d1"],
    "first3Days": ["d1", "d2", "d3"],
    "firstWeek": ["d1", "d2", "d3", "w1"],
    "first2Weeks": ["d1", "d2", "d3", "w1", "w2"],
    "firstMonth": ["d1", "d2", "d3", "w1", "w2", "m1"],
    "first3Months": ["d1", "d2", "d3", "w1", "w2", "m1", "m3"],
}
SUBSET_IDS = ["community_only", *SUBSET_WINDOWS, "user_only", "all"]

LABEL_COLUMNS = ["lifetime_min", "class_id", "churn7", *BINARY_WINDOWS]


@dataclass(frozen=True)
class FeatureDef:
    name: str
    scope: str  # "user" | "community"
    base_metric: str
    window: str | None  # window id, None = time-independent


def default_catalog() -> list[FeatureDef]:
    catalog = []
    for metric in USER_METRICS:
        catalog.append(FeatureDef(metric, "user", metric, None))
        for wid, _ in WINDOWS:
            catalog.append(FeatureDef(f"{metric}@{wid}", "user", metric, wid))
    for metric in REGISTRATION_METRICS:
        catalog.append(FeatureDef(metric, "user", metric, None))
    for metric in COMMUNITY_METRICS:
        catalog.append(FeatureDef(metric, "community", metric, None))
    return catalog


def catalog_counts(catalog: list[FeatureDef]) -> tuple[int, int]:
    """(time-dependent, time-independent) column counts."""
    dep = sum(1 for d in catalog if d.window is not None)
    return dep, len(catalog) - dep


def subset_filter(catalog: list[FeatureDef], subset_id: str) -> list[FeatureDef]:
    """Cumulative subset filtering per the named feature-subset protocol."""
    if subset_id == "all":
        return list(catalog)
    if subset_id == "community_only":
        return [d for d in catalog if d.scope == "community"]
    if subset_id == "user_only":
        return [d for d in catalog if d.scope == "user"]
    if subset_id not in SUBSET_WINDOWS:
        raise ValueError(f"unknown subset {subset_id!r}; expected one of {SUBSET_IDS}")
    allowed = set(SUBSET_WINDOWS[subset_id])
    kept = []
    for d in catalog:
        if d.scope == "community":
            kept.append(d)
        elif d.window is not None and d.window in allowed:
            kept.append(d)
        elif d.window is None and d.base_metric in REGISTRATION_METRICS:
            kept.append(d)
    return kept


# ---------------------------------------------------------------------------
# extraction


@dataclass
class CommunityStats:
    posts: int = 0
    replies: int = 0
    upvotes: int = 0
    downvotes: int = 0
    active_users: int = 0
    avg_response_time: float = float("nan")

    def as_row(self) -> list[float]:
        return [
            float(self.posts),
            float(self.replies),
            float(self.upvotes),
            float(self.downvotes),
            float(self.active_users),
            self.avg_response_time,
        ]


def community_stats(log: EventLog) -> dict[str, CommunityStats]:
    """Whole-observation aggregates per community."""
    stats = {c: CommunityStats() for c in log.communities}
    users_seen: dict[str, set] = {c: set() for c in log.communities}
    thread_created: dict[str, int] = {}
    first_reply: dict[str, int] = {}
    for ev in log.iter_events():
        st = stats[ev.community_id]
        users_seen[ev.community_id].add(ev.user_id)
        if ev.kind == "post":
            st.posts += 1
            if ev.content_id is not None:
                thread_created.setdefault(ev.content_id, ev.timestamp)
        elif ev.kind == "reply":
            st.replies += 1
            if ev.content_id is not None:
                prev = first_reply.get(ev.content_id)
                if prev is None or ev.timestamp < prev:
                    first_reply[ev.content_id] = ev.timestamp
        elif ev.kind == "upvote":
            st.upvotes += 1
        elif ev.kind == "downvote":
            st.downvotes += 1
    # response times accumulate into the thread's community
    gaps: dict[str, list[int]] = {c: [] for c in log.communities}
    thread_community: dict[str, str] = {}
    for ev in log.iter_events():
        if ev.kind == "post" and ev.content_id is not None:
            thread_community.setdefault(ev.content_id, ev.community_id)
    for cid, reply_ts in first_reply.items():
        created = thread_created.get(cid)
        if created is not None and reply_ts >= created:
            gaps[thread_community[cid]].append(reply_ts - created)
    for c, st in stats.items():
        st.active_users = len(users_seen[c])
        if gaps[c]:
            st.avg_response_time = float(np.mean(gaps[c]))
    return stats


def _replies_received(log: EventLog) -> dict[str, np.ndarray]:
    """Per thread-owner: sorted timestamps of replies their threads received."""
    thread_owner: dict[str, str] = {}
    for ev in log.iter_events():
        if ev.kind == "post" and ev.content_id is not None:
            thread_owner.setdefault(ev.content_id, ev.user_id)
    received: dict[str, list[int]] = {}
    for ev in log.iter_events():
        if ev.kind == "reply" and ev.content_id is not None:
            owner = thread_owner.get(ev.content_id)
            if owner is not None and owner != ev.user_id:
                received.setdefault(owner, []).append(ev.timestamp)
    return {uid: np.sort(np.asarray(ts, dtype=np.int64)) for uid, ts in received.items()}


_KIND_CODE = {"registered": 0, "post": 1, "reply": 2, "upvote": 3, "downvote": 4, "flag": 5}


def _user_metric_rows(user: UserRecord, received_ts: np.ndarray | None):
    """Metric values for every window, keyed metric -> {window_id or None: value}."""
    reg = user.registered_at
    ts = np.asarray([ev.timestamp for ev in user.events], dtype=np.int64) - reg
    kinds = np.asarray([_KIND_CODE[ev.kind] for ev in user.events], dtype=np.int8)
    pics = np.asarray(
        [1 if ev.is_picture else 0 for ev in user.events], dtype=np.int8
    )
    lifetime = int(ts[-1])
    post_ts = ts[kinds == 1]
    pic_post_ts = ts[(kinds == 1) & (pics == 1)]
    reply_ts = ts[kinds == 2]
    up_ts = ts[kinds == 3]
    down_ts = ts[kinds == 4]
    flag_ts = ts[kinds == 5]
    recv = (received_ts - reg) if received_ts is not None else np.empty(0, dtype=np.int64)

    out: dict[str, dict[str | None, float]] = {m: {} for m in USER_METRICS}
    variants: list[str | None] = [None] + [wid for wid, _ in WINDOWS]
    for wid in variants:
        bound = WINDOW_BOUNDS.get(wid) if wid is not None else None
        if bound is None:
            n_ev = ts.size
            b_min = float("inf")
        else:
            n_ev = int(np.searchsorted(ts, bound, side="right"))
            b_min = float(bound)
        p = post_ts[post_ts <= b_min] if bound is not None else post_ts
        r = reply_ts[reply_ts <= b_min] if bound is not None else reply_ts
        days = max(1.0, min(lifetime, b_min) / MINUTES_PER_DAY)
        n_posts = p.size
        n_pics = int(np.searchsorted(pic_post_ts, b_min, side="right")) if bound is not None else pic_post_ts.size
        n_recv = int(np.searchsorted(recv, b_min, side="right")) if bound is not None else recv.size

        out["postcreated"][wid] = float(n_posts)
        out["replycreated"][wid] = float(r.size)
        out["upvotes"][wid] = float(np.searchsorted(up_ts, b_min, side="right")) if bound is not None else float(up_ts.size)
        out["downvotes"][wid] = float(np.searchsorted(down_ts, b_min, side="right")) if bound is not None else float(down_ts.size)
        out["flags"][wid] = float(np.searchsorted(flag_ts, b_min, side="right")) if bound is not None else float(flag_ts.size)
        out["picture_posts"][wid] = float(n_pics)
        out["postcreated_day"][wid] = n_posts / days
        out["replycreated_day"][wid] = r.size / days
        out["replies_day"][wid] = n_recv / days
        out["picture_posts_day"][wid] = n_pics / days
        out["min_btwn_posts"][wid] = float(np.mean(np.diff(p))) if n_posts >= 2 else float("nan")
        own = ts[:n_ev]
        out["min_btwn_intrctns"][wid] = float(np.mean(np.diff(own))) if n_ev >= 2 else float("nan")
        out["RegPostGap_h"][wid] = float(p[0]) / 60.0 if n_posts >= 1 else float("nan")
    return out


def extract_user_features(user: UserRecord, window: str | None,
                          received_ts: np.ndarray | None = None):
    """(name, value) pairs for one user and one window (None = time-independent)."""
    rows = _user_metric_rows(user, received_ts)
    suffix = "" if window is None else f"@{window}"
    pairs = [(m + suffix, rows[m][window]) for m in USER_METRICS]
    if window is None:
        reg = user.registered_at
        pairs.append(("karma", float(user.karma)))
        pairs.append(("reg_weekday", float((reg // MINUTES_PER_DAY) % 7)))
        pairs.append(("reg_hour", float((reg % MINUTES_PER_DAY) // 60)))
    return pairs


def extract_community_features(stats: CommunityStats):
    return list(zip(COMMUNITY_METRICS, stats.as_row()))


@dataclass
class FeatureMatrix:
    user_ids: list[str]
    columns: list[str]
    X: np.ndarray  # float64, NaN = missing
    labels: dict[str, np.ndarray]
    home: list[str]
    catalog_version: str = CATALOG_VERSION

    def column_index(self, names) -> np.ndarray:
        pos = {c: i for i, c in enumerate(self.columns)}
        return np.asarray([pos[n] for n in names], dtype=np.intp)

    def restrict(self, defs: list[FeatureDef]) -> "FeatureMatrix":
        names = [d.name for d in defs]
        return FeatureMatrix(
            user_ids=self.user_ids,
            columns=names,
            X=self.X[:, self.column_index(names)],
            labels=self.labels,
            home=self.home,
            catalog_version=self.catalog_version,
        )

    def take_rows(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return FeatureMatrix(
            user_ids=[self.user_ids[i] for i in rows],
            columns=self.columns,
            X=self.X[rows],
            labels={k: v[rows] for k, v in self.labels.items()},
            home=[self.home[i] for i in rows],
            catalog_version=self.catalog_version,
        )


def extract_matrix(log: EventLog, catalog: list[FeatureDef] | None = None,
                   threshold_days: int = 7, include_blocked: bool = True) -> FeatureMatrix:
    """Extract the full feature matrix plus label columns from an event log."""
    if catalog is None:
        catalog = default_catalog()
    stats = community_stats(log)
    received = _replies_received(log)
    comm_rows = {c: dict(extract_community_features(st)) for c, st in stats.items()}

    col_names = [d.name for d in catalog]
    user_ids, rows, homes = [], [], []
    labels: dict[str, list] = {k: [] for k in LABEL_COLUMNS}
    for uid in sorted(log.users):
        user = log.users[uid]
        if not include_blocked and user.blocked:
            continue
        metric_rows = _user_metric_rows(user, received.get(uid))
        reg = user.registered_at
        home = home_community(user)
        values = {}
        for m, per_window in metric_rows.items():
            for wid, v in per_window.items():
                values[m if wid is None else f"{m}@{wid}"] = v
        values["karma"] = float(user.karma)
        values["reg_weekday"] = float((reg // MINUTES_PER_DAY) % 7)
        values["reg_hour"] = float((reg % MINUTES_PER_DAY) // 60)
        values.update(comm_rows[home])
        rows.append([values[c] for c in col_names])
        user_ids.append(uid)
        homes.append(home)
        lab = label_user(user, log.observation_end, threshold_days)
        labels["lifetime_min"].append(lab.lifetime_minutes)
        labels["class_id"].append(lab.class_id)
        labels["churn7"].append(int(lab.churned_at_observation_end))
        for w, v in lab.binary_flags.items():
            labels[w].append(int(v))

    X = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(col_names)))
    return FeatureMatrix(
        user_ids=user_ids,
        columns=col_names,
        X=X,
        labels={k: np.asarray(v) for k, v in labels.items()},
        home=homes,
    )


# ---------------------------------------------------------------------------
# imputation


@dataclass
class Imputer:
    columns: list[str]
    means: np.ndarray
    all_missing: list[str] = field(default_factory=list)


def fit_imputer(X: np.ndarray, train_rows, columns: list[str]) -> Imputer:
    """Column means over the training rows only; all-missing columns impute to 0."""
    train_rows = np.asarray(train_rows, dtype=np.intp)
    if train_rows.size == 0:
        raise ValueError("empty training partition")
    sub = X[train_rows]
    means = np.empty(sub.shape[1], dtype=np.float64)
    all_missing = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # nanmean on empty slice
        col_means = np.nanmean(sub, axis=0)
    for j in range(sub.shape[1]):
        if np.isnan(col_means[j]):
            means[j] = 0.0
            all_missing.append(columns[j])
        else:
            means[j] = col_means[j]
    if all_missing:
        warnings.warn(f"columns entirely missing on training rows, imputing 0: {all_missing}")
    return Imputer(columns=list(columns), means=means, all_missing=all_missing)


def apply_imputer(imputer: Imputer, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != imputer.means.size:
        raise ValueError("column count mismatch")
    out = X.copy()
    nan_r, nan_c = np.nonzero(np.isnan(out))
    out[nan_r, nan_c] = imputer.means[nan_c]
    return out


# ---------------------------------------------------------------------------
# persistence: CSV matrix + JSON sidecar


def write_matrix_csv(fm: FeatureMatrix, csv_path, sidecar_path=None,
                     imputer: Imputer | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", *fm.columns, *LABEL_COLUMNS])
        for i, uid in enumerate(fm.user_ids):
            row = [uid]
            for v in fm.X[i]:
                row.append("" if np.isnan(v) else repr(float(v)))
            row.extend(int(fm.labels[k][i]) for k in LABEL_COLUMNS)
            writer.writerow(row)
    if sidecar_path is not None:
        sidecar = {
            "catalog_version": fm.catalog_version,
            "columns": fm.columns,
            "label_columns": LABEL_COLUMNS,
            "window_bounds": {wid: b for wid, b in WINDOWS},
            "n_rows": len(fm.user_ids),
            "home_community": fm.home,
        }
        if imputer is not None:
            sidecar["imputation_means"] = dict(zip(imputer.columns, imputer.means.tolist()))
        with open(sidecar_path, "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)


def read_matrix_csv(csv_path, sidecar_path) -> FeatureMatrix:
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    columns = sidecar["columns"]
    user_ids, homes, rows = [], [], []
    labels: dict[str, list] = {k: [] for k in LABEL_COLUMNS}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["user_id", *columns, *LABEL_COLUMNS]:
            raise ValueError("matrix CSV header does not match its sidecar")
        nf = len(columns)
        for rec in reader:
            user_ids.append(rec[0])
            rows.append([float(v) if v else float("nan") for v in rec[1 : 1 + nf]])
            for k, v in zip(LABEL_COLUMNS, rec[1 + nf :]):
                labels[k].append(int(v))
    X = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(
        user_ids=user_ids,
        columns=columns,
        X=X,
        labels={k: np.asarray(v) for k, v in labels.items()},
        home=sidecar.get("home_community", [""] * len(user_ids)),
        catalog_version=sidecar["catalog_version"],
    )
