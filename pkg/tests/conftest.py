from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from temporec.corpus import InteractionLog, build_corpus, preprocess, PreprocessOptions

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_log(rows) -> InteractionLog:
    """``rows`` of (user, item, timestamp) or (user, item, timestamp, rating)."""
    rows = [tuple(r) + (np.nan,) * (4 - len(r)) for r in rows]
    frame = pd.DataFrame(rows, columns=["user", "item", "timestamp", "rating"])
    return InteractionLog(frame)


def random_log(rng: np.random.Generator, n_users: int, n_items: int, n_events: int, t_max: int = 1000):
    users = rng.integers(0, n_users, n_events)
    items = rng.integers(0, n_items, n_events)
    times = rng.integers(0, t_max, n_events)
    return make_log([(f"u{u:03d}", f"i{i:03d}", int(t)) for u, i, t in zip(users, items, times)])


def random_corpus(seed: int, n_users: int = 40, n_items: int = 30, n_events: int = 600, t_max: int = 1000):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n_users, n_items, n_events, t_max)
    return build_corpus(preprocess(log, PreprocessOptions(min_user_deg=2, min_item_deg=1)))


@pytest.fixture
def small_corpus():
    return random_corpus(0)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
