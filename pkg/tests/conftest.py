import numpy as np
import pytest
from hypothesis import settings

from midorf.core import Bag, ModelParams, make_dataset

#: criterion number -> result line, filled by the acceptance suite
ACCEPTANCE_LINES = {}

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_params(rng, L, d, scale=1.0):
    """Random MI-DORF parameters with well-spread cut-points."""
    return ModelParams(
        beta=rng.normal(0.0, scale, d),
        first_cut=rng.normal(-0.5, 0.5),
        log_gaps=rng.normal(0.0, 0.4, L - 2),
        transition=rng.normal(0.0, scale, (L, L)),
        card_weight=rng.normal(0.0, scale),
    )


def random_bag(rng, T, d, L, bag_id="b"):
    h = rng.integers(1, L + 1, T)
    return Bag(bag_id, rng.normal(size=(T, d)), int(h.max()), h)


def random_dataset(rng, n, L, d, t_range=(1, 5)):
    bags = [random_bag(rng, int(rng.integers(t_range[0], t_range[1] + 1)), d, L, f"b{k}")
            for k in range(n)]
    return make_dataset(bags, L, d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
