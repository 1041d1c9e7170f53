import numpy as np
import pytest

from eventinterp.events import EventInterval


def random_interval(rng, n_events, t_start=0, t_end=10_000, width=32, height=24):
    """Random valid interval for property sweeps."""
    t = np.sort(rng.integers(t_start, t_end, size=n_events))
    return EventInterval(
        t_start,
        t_end,
        t=t,
        x=rng.integers(0, width, size=n_events),
        y=rng.integers(0, height, size=n_events),
        polarity=rng.choice([-1, 1], size=n_events),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
