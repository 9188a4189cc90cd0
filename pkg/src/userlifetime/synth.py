"""Seeded synthetic event-log generator for disjoint communities.

Every user gets a lifetime class drawn from a configurable mixture, a
log-uniform lifetime within the class bounds, and activity events drawn
from per-class daily rates. `signal_strength` interpolates the per-class
activity profiles between a single shared profile (0.0) and well-separated
ones (1.0). Generation is fully deterministic given the seed: each user
draws from its own seed stream, so community order and worker counts
cannot change the output.

The per-class rate defaults are plausible fabrications chosen to make the
pipeline testable at desk scale; they are not fitted to any real system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .events import (
    CLASS_BOUNDS,
    MINUTES_PER_DAY,
    EventLog,
    InteractionEvent,
    UserRecord,
)

# class fractions used as the default generator mixture (normalized to sum 1)
_RAW_MIXTURE = (0.133, 0.121, 0.074, 0.123, 0.264, 0.284)
TABLE1_MIXTURE = tuple(x / sum(_RAW_MIXTURE) for x in _RAW_MIXTURE)

MIN_LIFETIME_MINUTES = 20  # log-uniform sampling needs a positive floor


@dataclass(frozen=True)
class ActivityProfile:
    posts_per_day: float
    replies_per_day: float
    vote_ratio: float  # votes/flags per day relative to post+reply rate
    picture_prob: float
    latency_log_mu: float  # lognormal reply-latency, minutes
    latency_log_sigma: float

    def lerp(self, other: "ActivityProfile", t: float) -> "ActivityProfile":
        mix = lambda a, b: (1.0 - t) * a + t * b
        return ActivityProfile(
            mix(self.posts_per_day, other.posts_per_day),
            mix(self.replies_per_day, other.replies_per_day),
            mix(self.vote_ratio, other.vote_ratio),
            mix(self.picture_prob, other.picture_prob),
            mix(self.latency_log_mu, other.latency_log_mu),
            mix(self.latency_log_sigma, other.latency_log_sigma),
        )


BASE_PROFILE = ActivityProfile(0.6, 0.5, 0.9, 0.35, 4.2, 1.0)

# one per lifetime class; engagement grows with class
CLASS_PROFILES = (
    ActivityProfile(0.15, 0.10, 0.30, 0.05, 5.5, 1.2),
    ActivityProfile(0.30, 0.25, 0.50, 0.20, 5.0, 1.1),
    ActivityProfile(0.50, 0.40, 0.80, 0.35, 4.5, 1.0),
    ActivityProfile(0.70, 0.55, 1.10, 0.50, 4.0, 0.9),
    ActivityProfile(0.85, 0.70, 1.40, 0.65, 3.5, 0.8),
    ActivityProfile(1.00, 0.85, 1.70, 0.80, 3.0, 0.7),
)

MAX_EVENTS_PER_USER = 600  # memory guard; effectively never hit at default rates


@dataclass
class GeneratorConfig:
    communities: list[tuple[str, int]]
    seed: int
    class_mixture: tuple = TABLE1_MIXTURE
    observation_days: int = 120
    base_profile: ActivityProfile = BASE_PROFILE
    class_profiles: tuple = CLASS_PROFILES
    signal_strength: float = 1.0
    metadata: dict = field(default_factory=lambda: {"activity_rates": "fabricated defaults"})

    def violations(self) -> list[str]:
        problems = []
        if not self.communities:
            problems.append("no communities configured")
        ids = [c for c, _ in self.communities]
        if len(set(ids)) != len(ids):
            problems.append("duplicate community ids")
        for cid, n in self.communities:
            if not cid:
                problems.append("empty community id")
            if n < 1:
                problems.append(f"community {cid!r}: user count must be >= 1")
        if len(self.class_mixture) != 6:
            problems.append("class_mixture must have 6 entries")
        elif abs(sum(self.class_mixture) - 1.0) > 1e-9:
            problems.append(f"class_mixture sums to {sum(self.class_mixture)!r}, not 1")
        elif any(p < 0 for p in self.class_mixture):
            problems.append("class_mixture entries must be non-negative")
        if not 0.0 <= self.signal_strength <= 1.0:
            problems.append("signal_strength must be in [0, 1]")
        if self.observation_days < 1:
            problems.append("observation_days must be >= 1")
        elif (len(self.class_mixture) == 6 and self.class_mixture[5] > 0
              and self.observation_days * MINUTES_PER_DAY <= CLASS_BOUNDS[-1]):
            problems.append(
                "observation window must exceed 3 months when class 6 has mass"
            )
        for prof in (self.base_profile, *self.class_profiles):
            if min(prof.posts_per_day, prof.replies_per_day, prof.vote_ratio) < 0:
                problems.append("activity rates must be >= 0")
                break
        if self.seed is None:
            problems.append("seed is mandatory")
        return problems


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("invalid generator config: " + "; ".join(problems))
        self.problems = problems


def _class_interval(class_id: int, observation_minutes: int) -> tuple[int, int]:
    """Closed integer lifetime range for a class; class 6 capped at observation."""
    if class_id == 1:
        return MIN_LIFETIME_MINUTES, CLASS_BOUNDS[0]
    if class_id == 6:
        return CLASS_BOUNDS[-1] + 1, observation_minutes
    return CLASS_BOUNDS[class_id - 2] + 1, CLASS_BOUNDS[class_id - 1]


def _sample_lifetime(rng, class_id: int, observation_minutes: int) -> int:
    lo, hi = _class_interval(class_id, observation_minutes)
    L = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    return min(max(L, lo), hi)


def _vote_kind(u: float) -> str:
    if u < 0.72:
        return "upvote"
    if u < 0.92:
        return "downvote"
    return "flag"


def generate(config: GeneratorConfig) -> EventLog:
    problems = config.violations()
    if problems:
        raise ConfigError(problems)

    obs_min = config.observation_days * MINUTES_PER_DAY
    s = config.signal_strength
    profiles = [config.base_profile.lerp(p, s) for p in config.class_profiles]

    users: dict[str, UserRecord] = {}
    communities: set[str] = set()

    for ci, (comm, n_users) in enumerate(config.communities):
        communities.add(comm)
        # pass 1: per-user skeleton (times + own content)
        skeletons = []
        threads: list[tuple[int, str, str]] = []  # (ts, content_id, owner)
        for ui in range(n_users):
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, ci, ui]))
            uid = f"{comm}-u{ui:05d}"
            class_id = int(rng.choice(6, p=np.asarray(config.class_mixture))) + 1
            L = _sample_lifetime(rng, class_id, obs_min)
            reg = int(rng.integers(0, obs_min - L + 1))
            prof = profiles[class_id - 1]
            L_days = L / MINUTES_PER_DAY
            n_posts = min(int(rng.poisson(prof.posts_per_day * L_days)), MAX_EVENTS_PER_USER)
            n_replies = min(int(rng.poisson(prof.replies_per_day * L_days)), MAX_EVENTS_PER_USER)
            vote_rate = prof.vote_ratio * (prof.posts_per_day + prof.replies_per_day)
            n_votes = min(int(rng.poisson(vote_rate * L_days)), MAX_EVENTS_PER_USER)

            post_ts = np.sort(rng.integers(0, L + 1, n_posts)) + reg
            final_post_id = f"{comm}-{ui}-final"
            post_ids = [f"{comm}-{ui}-p{k}" for k in range(n_posts)]
            pictures = rng.random(n_posts + 1) < prof.picture_prob
            reply_ts = np.sort(rng.integers(0, L + 1, n_replies)) + reg
            reply_pics = rng.random(n_replies) < prof.picture_prob
            vote_ts = np.sort(rng.integers(0, L + 1, n_votes)) + reg
            vote_kind_u = rng.random(n_votes)

            for k in range(n_posts):
                threads.append((int(post_ts[k]), post_ids[k], uid))
            threads.append((reg + L, final_post_id, uid))
            skeletons.append(
                (uid, class_id, L, reg, prof, post_ts, post_ids, final_post_id,
                 pictures, reply_ts, reply_pics, vote_ts, vote_kind_u)
            )

        threads.sort()
        thread_ts = np.asarray([t[0] for t in threads], dtype=np.int64)
        thread_ids = [t[1] for t in threads]
        thread_owner = [t[2] for t in threads]
        karma_delta = np.zeros(len(threads), dtype=np.int64)

        # pass 2: attach replies and votes to existing threads
        for ui, skel in enumerate(skeletons):
            (uid, class_id, L, reg, prof, post_ts, post_ids, final_post_id,
             pictures, reply_ts, reply_pics, vote_ts, vote_kind_u) = skel
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, ci, ui, 7]))
            events = [InteractionEvent(uid, "registered", reg, comm)]
            for k in range(len(post_ts)):
                events.append(InteractionEvent(
                    uid, "post", int(post_ts[k]), comm, post_ids[k], bool(pictures[k])
                ))
            events.append(InteractionEvent(
                uid, "post", reg + L, comm, final_post_id, bool(pictures[-1])
            ))
            if reply_ts.size:
                lat = rng.lognormal(prof.latency_log_mu, prof.latency_log_sigma, reply_ts.size)
                hi = np.searchsorted(thread_ts, reply_ts, side="right")
                target = np.searchsorted(thread_ts, reply_ts - lat, side="left")
                target = np.minimum(target, hi - 1)  # newest thread when latency overshoots
                for k in range(reply_ts.size):
                    if hi[k] == 0:
                        continue  # nothing to reply to yet
                    events.append(InteractionEvent(
                        uid, "reply", int(reply_ts[k]), comm,
                        thread_ids[target[k]], bool(reply_pics[k]),
                    ))
            if vote_ts.size:
                # votes are snapped to the target content's creation time,
                # which must stay inside the voter's alive interval
                lo = int(np.searchsorted(thread_ts, reg, side="left"))
                hi = np.searchsorted(thread_ts, vote_ts, side="right")
                valid = hi > lo
                targets = lo + (rng.random(vote_ts.size) * (hi - lo)).astype(np.int64)
                for k in range(vote_ts.size):
                    if not valid[k]:
                        continue
                    target = int(targets[k])
                    kind = _vote_kind(vote_kind_u[k])
                    if kind == "upvote":
                        karma_delta[target] += 1
                    elif kind == "downvote":
                        karma_delta[target] -= 1
                    events.append(InteractionEvent(
                        uid, kind, int(thread_ts[target]), comm, thread_ids[target]
                    ))
            events.sort(key=lambda e: (e.timestamp, e.kind != "registered", e.kind, e.content_id or ""))
            users[uid] = UserRecord(uid, reg, events)

        owner_karma: dict[str, int] = {}
        for t in range(len(threads)):
            if karma_delta[t]:
                owner_karma[thread_owner[t]] = owner_karma.get(thread_owner[t], 0) + int(karma_delta[t])
        for uid, delta in owner_karma.items():
            users[uid].karma += delta

    return EventLog(users=users, communities=communities, observation_end=obs_min)


# ---------------------------------------------------------------------------
# presets and config files

PRESET_NAMES = ("country-mini", "five-cities", "tiny")

FIVE_CITIES = [
    ("riyadh", 8000),
    ("jeddah", 3000),
    ("mecca", 1300),
    ("al-bahah", 320),
    ("al-jafr", 174),
]


def preset(name: str, seed: int = 0, signal_strength: float = 1.0) -> GeneratorConfig:
    if name == "five-cities":
        communities = list(FIVE_CITIES)
    elif name == "country-mini":
        communities = [("country", sum(n for _, n in FIVE_CITIES))]
    elif name == "tiny":
        communities = [("tiny-a", 120), ("tiny-b", 60)]
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    return GeneratorConfig(communities=communities, seed=seed, signal_strength=signal_strength)


def config_to_dict(config: GeneratorConfig) -> dict:
    prof = lambda p: {
        "posts_per_day": p.posts_per_day,
        "replies_per_day": p.replies_per_day,
        "vote_ratio": p.vote_ratio,
        "picture_prob": p.picture_prob,
        "latency_log_mu": p.latency_log_mu,
        "latency_log_sigma": p.latency_log_sigma,
    }
    return {
        "communities": [{"id": c, "users": n} for c, n in config.communities],
        "seed": config.seed,
        "class_mixture": list(config.class_mixture),
        "observation_days": config.observation_days,
        "signal_strength": config.signal_strength,
        "base_profile": prof(config.base_profile),
        "class_profiles": [prof(p) for p in config.class_profiles],
        "metadata": config.metadata,
    }


def config_from_dict(doc: dict) -> GeneratorConfig:
    def community(c):
        # accept both {"id": ..., "users": ...} and a bare [id, users] pair
        if isinstance(c, dict):
            return str(c["id"]), int(c["users"])
        cid, n = c
        return str(cid), int(n)

    try:
        communities = [community(c) for c in doc["communities"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"bad communities entry: {exc}"]) from exc
    prof = lambda d: ActivityProfile(
        float(d["posts_per_day"]),
        float(d["replies_per_day"]),
        float(d["vote_ratio"]),
        float(d["picture_prob"]),
        float(d["latency_log_mu"]),
        float(d["latency_log_sigma"]),
    )
    config = GeneratorConfig(
        communities=communities,
        seed=int(doc.get("seed", 0)),
        class_mixture=tuple(doc.get("class_mixture", TABLE1_MIXTURE)),
        observation_days=int(doc.get("observation_days", 120)),
        signal_strength=float(doc.get("signal_strength", 1.0)),
        base_profile=prof(doc["base_profile"]) if "base_profile" in doc else BASE_PROFILE,
        class_profiles=tuple(prof(p) for p in doc["class_profiles"])
        if "class_profiles" in doc else CLASS_PROFILES,
        metadata=doc.get("metadata", {"activity_rates": "fabricated defaults"}),
    )
    problems = config.violations()
    if problems:
        raise ConfigError(problems)
    return config


def load_config(path) -> GeneratorConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    return config_from_dict(doc)
