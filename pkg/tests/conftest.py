import numpy as np
import pytest

from ehrelay.model import Scenario, compute_gains, gen_eh_trace, place_relays
from ehrelay.utility import AfUtility


def random_instance(seed, **overrides):
    """Placed scenario, trace and utility drawn from one seed."""
    rng = np.random.default_rng(seed)
    scenario = place_relays(Scenario(**overrides), rng)
    trace = gen_eh_trace(scenario, rng)
    return scenario, trace, AfUtility(scenario, compute_gains(scenario))


@pytest.fixture
def instance():
    return random_instance
