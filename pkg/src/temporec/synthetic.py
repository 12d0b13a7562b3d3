"""Synthetic interaction logs where items arrive over time and users favour new ones.

Each user event at time ``t`` picks one not-yet-consumed item among those
already released, with probability proportional to

    quality[j] * taste[u, genre[j]] * exp(-(decay + novelty[u]) * age / horizon)

where ``age = t - arrival[j]`` and ``novelty[u]`` has mean ``affinity``. With
``decay = affinity = 0`` the choice ignores arrival times entirely (beyond
availability).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .corpus import InteractionLog
from .seeding import stage_rng

DAY = 86_400


@dataclass(frozen=True)
class DriftCorpusSpec:
    n_users: int = 2000
    n_items: int = 500
    horizon: int = 730 * DAY
    launch_fraction: float = 0.6
    decay: float = 0.0
    affinity: float = 8.0
    affinity_shape: float = 4.0
    n_genres: int = 10
    taste_concentration: float = 0.3
    events_mean: float = 30.0
    min_events: int = 8
    burst_fraction: float = 0.2
    burst_length: float = 0.1
    start_time: int = 1_300_000_000
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1 or self.n_genres < 1 or self.horizon < 1:
            raise ValueError("counts and horizon must be >= 1")
        if self.decay < 0 or self.affinity < 0 or not self.affinity_shape > 0:
            raise ValueError("rates must be nonnegative")
        if not 0 <= self.launch_fraction <= 1 or not 0 <= self.burst_fraction <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.events_mean < self.min_events or self.min_events < 1:
            raise ValueError("need 1 <= min_events <= events_mean")


@dataclass(frozen=True, eq=False)
class DriftSample:
    log: InteractionLog
    arrival: np.ndarray  # seconds after start_time
    quality: np.ndarray
    genre: np.ndarray
    taste: np.ndarray  # users x genres
    novelty: np.ndarray  # per-user recency affinity


def simulate_drift(spec: DriftCorpusSpec) -> DriftSample:
    rng = stage_rng(spec.seed, "items")
    n_launch = int(round(spec.launch_fraction * spec.n_items))
    arrival = np.concatenate(
        [np.zeros(n_launch), np.sort(rng.uniform(0, spec.horizon, spec.n_items - n_launch))]
    ).astype(np.int64)
    quality = rng.lognormal(0.0, 0.5, spec.n_items)
    genre = rng.integers(0, spec.n_genres, spec.n_items)

    rng = stage_rng(spec.seed, "users")
    taste = rng.dirichlet(np.full(spec.n_genres, spec.taste_concentration), spec.n_users)
    novelty = spec.affinity * rng.gamma(spec.affinity_shape, 1.0 / spec.affinity_shape, spec.n_users)
    starts = rng.uniform(0, 0.8 * spec.horizon, spec.n_users)
    counts = spec.min_events + rng.poisson(spec.events_mean - spec.min_events, spec.n_users)
    bursty = rng.random(spec.n_users) < spec.burst_fraction

    rng = stage_rng(spec.seed, "events")
    users, items, times = [], [], []
    h = float(spec.horizon)
    for u in range(spec.n_users):
        if bursty[u]:
            lo = rng.uniform(0, h * (1 - spec.burst_length))
            t_events = np.sort(rng.uniform(lo, lo + h * spec.burst_length, counts[u]))
        else:
            t_events = np.sort(rng.uniform(starts[u], h, counts[u]))
        t_events = np.floor(t_events).astype(np.int64)
        appeal = quality * taste[u, genre]
        rate = (spec.decay + novelty[u]) / h
        seen = np.zeros(spec.n_items, dtype=bool)
        for t in t_events:
            avail = (arrival <= t) & ~seen
            if not avail.any():
                continue
            w = np.where(avail, appeal * np.exp(-rate * (t - arrival)), 0.0)
            total = w.sum()
            if total <= 0:
                continue
            j = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
            j = min(j, spec.n_items - 1)
            if not avail[j]:
                continue
            seen[j] = True
            users.append(u)
            items.append(j)
            times.append(spec.start_time + int(t))

    uw = len(str(spec.n_users - 1))
    iw = len(str(spec.n_items - 1))
    frame = pd.DataFrame(
        {
            "user": [f"u{u:0{uw}d}" for u in users],
            "item": [f"i{j:0{iw}d}" for j in items],
            "timestamp": np.asarray(times, dtype=np.int64),
            "rating": np.full(len(users), np.nan),
        }
    )
    return DriftSample(InteractionLog(frame), arrival, quality, genre, taste, novelty)


def generate_drift_corpus(spec: DriftCorpusSpec) -> InteractionLog:
    return simulate_drift(spec).log
