import numpy as np
import pytest
import torch
from hypothesis import settings

from infocon.synthdata import PhaseSpec, SyntheticTaskSpec, generate_dataset, standard_spec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(standard_spec(), 12, seed=3)


@pytest.fixture(scope="session")
def short_spec():
    # one short phase: trajectories of a dozen steps, for the tiny config
    return SyntheticTaskSpec(
        phases=(PhaseSpec((0.55, 0.55), (0.6, 0.6), 0.04, 0.07, 0.01),),
        max_steps=16,
        start_low=(-0.05, -0.05),
        start_high=(0.05, 0.05),
    )


@pytest.fixture(scope="session")
def tiny_dataset(short_spec):
    ds = generate_dataset(short_spec, 4, seed=1)
    assert all(len(t) <= 16 for t in ds.trajectories)
    return ds


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    import sys

    results = {}
    for name, mod in list(sys.modules.items()):
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            results.update(getattr(mod, "ACCEPTANCE_RESULTS", {}))
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
