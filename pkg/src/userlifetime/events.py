"""Event-log ingestion and per-user lifetime labeling.

Timestamps are integer minutes since an arbitrary epoch.  Vote and flag
events never carry their own time: they are snapped to the creation time
(and community) of the content they target, so downstream code cannot
accidentally rely on voting times the data does not really have.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

MINUTES_PER_DAY = 1440
MINUTES_PER_MONTH = 43830  # 30.44-day calendar-average month
MINUTES_PER_3_MONTHS = 3 * MINUTES_PER_MONTH  # 131490 (91.31 days)

EVENT_KINDS = ("registered", "post", "reply", "upvote", "downvote", "flag")
VOTE_KINDS = ("upvote", "downvote", "flag")

# lifetime-class upper bounds in minutes, classes 1..5; class 6 is open-ended
CLASS_BOUNDS = (
    MINUTES_PER_DAY,
    7 * MINUTES_PER_DAY,
    14 * MINUTES_PER_DAY,
    MINUTES_PER_MONTH,
    MINUTES_PER_3_MONTHS,
)

# windows for the binary "lifetime exceeds w" task
BINARY_WINDOWS = {
    "gt_1d": MINUTES_PER_DAY,
    "gt_7d": 7 * MINUTES_PER_DAY,
    "gt_14d": 14 * MINUTES_PER_DAY,
    "gt_1m": MINUTES_PER_MONTH,
    "gt_3m": MINUTES_PER_3_MONTHS,
}

LABEL_CSV_HEADER = "user,lifetime_min,class,churn7,gt_1d,gt_7d,gt_14d,gt_1m,gt_3m"


class InteractionEvent(NamedTuple):
    user_id: str
    kind: str
    timestamp: int
    community_id: str
    content_id: str | None = None
    is_picture: bool | None = None


@dataclass
class UserRecord:
    user_id: str
    registered_at: int
    events: list[InteractionEvent]
    karma: int = 0
    blocked: bool = False


@dataclass
class EventLog:
    users: dict[str, UserRecord]
    communities: set[str]
    observation_end: int
    warnings: list[str] = field(default_factory=list)

    def iter_events(self) -> Iterable[InteractionEvent]:
        for user in self.users.values():
            yield from user.events


@dataclass
class LifetimeLabel:
    user_id: str
    lifetime_minutes: int
    class_id: int
    churned_at_observation_end: bool
    binary_flags: dict[str, bool]


class ParseError(ValueError):
    pass


def compute_lifetime(user: UserRecord) -> int:
    """Minutes between registration and the user's last interaction."""
    return user.events[-1].timestamp - user.registered_at


def lifetime_class(lifetime_minutes: int) -> int:
    """Map a lifetime to one of six classes; boundaries belong to the lower class."""
    if lifetime_minutes < 0:
        raise ValueError(f"negative lifetime: {lifetime_minutes}")
    for cls, bound in enumerate(CLASS_BOUNDS, start=1):
        if lifetime_minutes <= bound:
            return cls
    return 6


def churn_label(user: UserRecord, observation_end: int, threshold_days: int = 7) -> bool:
    """True iff the user shows no activity within the last threshold_days."""
    if threshold_days <= 0:
        raise ValueError("threshold_days must be positive")
    return user.events[-1].timestamp < observation_end - threshold_days * MINUTES_PER_DAY


def home_community(user: UserRecord) -> str:
    """Community with the user's most interactions; ties go to the one entered first."""
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for ev in user.events:
        counts[ev.community_id] = counts.get(ev.community_id, 0) + 1
        if ev.community_id not in first_seen:
            first_seen[ev.community_id] = ev.timestamp
    return max(counts, key=lambda c: (counts[c], -first_seen[c]))


def binary_flags(lifetime_minutes: int, windows: dict[str, int] | None = None) -> dict[str, bool]:
    """Per-window 'lifetime exceeds w' flags; monotone non-increasing in w."""
    if windows is None:
        windows = BINARY_WINDOWS
    return {wid: lifetime_minutes > bound for wid, bound in windows.items()}


def label_user(user: UserRecord, observation_end: int, threshold_days: int = 7) -> LifetimeLabel:
    lt = compute_lifetime(user)
    return LifetimeLabel(
        user_id=user.user_id,
        lifetime_minutes=lt,
        class_id=lifetime_class(lt),
        churned_at_observation_end=churn_label(user, observation_end, threshold_days),
        binary_flags=binary_flags(lt),
    )


def label_log(log: EventLog, threshold_days: int = 7, include_blocked: bool = True) -> list[LifetimeLabel]:
    """Labels for every user, in user-id order. Blocked users can be filtered out."""
    labels = []
    for uid in sorted(log.users):
        user = log.users[uid]
        if not include_blocked and user.blocked:
            continue
        labels.append(label_user(user, log.observation_end, threshold_days))
    return labels


def write_labels_csv(labels: list[LifetimeLabel], stream) -> None:
    stream.write(LABEL_CSV_HEADER + "\n")
    for lab in labels:
        flags = ",".join("1" if lab.binary_flags[w] else "0" for w in BINARY_WINDOWS)
        stream.write(
            f"{lab.user_id},{lab.lifetime_minutes},{lab.class_id},"
            f"{1 if lab.churned_at_observation_end else 0},{flags}\n"
        )


# ---------------------------------------------------------------------------
# parsing

_JSON_FIELDS = ("user", "kind", "ts_min", "community", "content", "picture")


def _event_from_row(row: dict, lineno: int) -> tuple[InteractionEvent, int, bool]:
    """Build an event from a parsed row; returns (event, karma, blocked)."""
    try:
        uid = str(row["user"])
        kind = str(row["kind"])
        ts = int(row["ts_min"])
        community = str(row["community"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: malformed row ({exc})") from exc
    if kind not in EVENT_KINDS:
        raise ParseError(f"line {lineno}: unknown event kind {kind!r}")
    if ts < 0:
        raise ParseError(f"line {lineno}: negative timestamp {ts}")
    if not community:
        raise ParseError(f"line {lineno}: empty community id")
    content = row.get("content")
    content = str(content) if content not in (None, "") else None
    picture = row.get("picture")
    if picture in (None, ""):
        picture = None
    elif isinstance(picture, str):
        picture = picture.lower() in ("1", "true", "yes")
    else:
        picture = bool(picture)
    karma = int(row.get("karma") or 0)
    blocked_raw = row.get("blocked")
    if isinstance(blocked_raw, str):
        blocked = blocked_raw.lower() in ("1", "true", "yes")
    else:
        blocked = bool(blocked_raw)
    return InteractionEvent(uid, kind, ts, community, content, picture), karma, blocked


def _iter_rows(stream, fmt: str):
    if fmt == "jsonl":
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc})") from exc
            if not isinstance(row, dict):
                raise ParseError(f"line {lineno}: expected a JSON object")
            yield lineno, row
    elif fmt == "csv":
        reader = csv.DictReader(stream)
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row
    else:
        raise ValueError(f"unknown format {fmt!r}")


def parse_events(stream, fmt: str = "jsonl") -> EventLog:
    """Parse a JSON-Lines or CSV event stream into a validated EventLog.

    Vote/flag timestamps are snapped to their target content's creation
    time; a missing `registered` event is synthesized at the user's first
    activity. Both repairs emit warnings on the returned log.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    per_user: dict[str, list[InteractionEvent]] = {}
    karma: dict[str, int] = {}
    blocked: dict[str, bool] = {}
    content_created: dict[str, tuple[int, str]] = {}
    registered_seen: dict[str, int] = {}
    warnings: list[str] = []

    for lineno, row in _iter_rows(stream, fmt):
        ev, k, b = _event_from_row(row, lineno)
        if ev.kind == "registered":
            if ev.user_id in registered_seen:
                raise ParseError(
                    f"line {lineno}: duplicate 'registered' event for user {ev.user_id}"
                )
            registered_seen[ev.user_id] = ev.timestamp
            karma[ev.user_id] = k
            blocked[ev.user_id] = b
        elif ev.kind == "post" and ev.content_id is not None:
            # first post carrying a content id defines that content's creation
            content_created.setdefault(ev.content_id, (ev.timestamp, ev.community_id))
        per_user.setdefault(ev.user_id, []).append(ev)

    users: dict[str, UserRecord] = {}
    communities: set[str] = set()
    observation_end = 0
    for uid in sorted(per_user):
        events = per_user[uid]
        # snap votes/flags to the targeted content's creation time and place
        snapped = []
        for ev in events:
            if ev.kind in VOTE_KINDS and ev.content_id is not None:
                created = content_created.get(ev.content_id)
                if created is None:
                    warnings.append(
                        f"user {uid}: {ev.kind} targets unknown content {ev.content_id}"
                    )
                elif (ev.timestamp, ev.community_id) != created:
                    warnings.append(
                        f"user {uid}: {ev.kind} on {ev.content_id} snapped "
                        f"from t={ev.timestamp} to t={created[0]}"
                    )
                    ev = ev._replace(timestamp=created[0], community_id=created[1])
            snapped.append(ev)
        events = snapped
        if uid not in registered_seen:
            first_ts = min(ev.timestamp for ev in events)
            first_comm = min(
                (ev for ev in events if ev.timestamp == first_ts), key=lambda e: e.kind
            ).community_id
            events.append(InteractionEvent(uid, "registered", first_ts, first_comm))
            warnings.append(f"user {uid}: synthesized 'registered' event at t={first_ts}")
            registered_seen[uid] = first_ts
        reg_ts = registered_seen[uid]
        # snapping may pull a vote before registration; clamp to keep
        # 'registered is earliest' intact
        clamped = []
        for ev in events:
            if ev.kind != "registered" and ev.timestamp < reg_ts:
                warnings.append(
                    f"user {uid}: {ev.kind} at t={ev.timestamp} clamped to registration t={reg_ts}"
                )
                ev = ev._replace(timestamp=reg_ts)
            clamped.append(ev)
        # registered sorts first at equal timestamps
        clamped.sort(key=lambda e: (e.timestamp, e.kind != "registered", e.kind, e.content_id or ""))
        users[uid] = UserRecord(
            user_id=uid,
            registered_at=reg_ts,
            events=clamped,
            karma=karma.get(uid, 0),
            blocked=blocked.get(uid, False),
        )
        communities.update(ev.community_id for ev in clamped)
        observation_end = max(observation_end, clamped[-1].timestamp)

    return EventLog(
        users=users,
        communities=communities,
        observation_end=observation_end,
        warnings=warnings,
    )


def write_events_jsonl(log: EventLog, stream) -> None:
    """Canonical JSON-Lines writer: events globally sorted, stable field order."""
    rows = []
    for user in log.users.values():
        for ev in user.events:
            row = {
                "user": ev.user_id,
                "kind": ev.kind,
                "ts_min": ev.timestamp,
                "community": ev.community_id,
            }
            if ev.content_id is not None:
                row["content"] = ev.content_id
            if ev.is_picture is not None:
                row["picture"] = ev.is_picture
            if ev.kind == "registered":
                if user.karma:
                    row["karma"] = user.karma
                if user.blocked:
                    row["blocked"] = True
            rows.append((ev.timestamp, ev.user_id, ev.kind, row))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    for _, _, _, row in rows:
        stream.write(json.dumps(row, separators=(",", ":")) + "\n")
