import sys

import pytest

from lsrgan.data import SynthSpec, make_synthetic
from lsrgan.training import TrainConfig

# small enough that an epoch takes a fraction of a second
TINY = dict(hidden_g=32, hidden_d=32, noise_dim=8, output_activation="tanh", lr=1e-3, batch_size=32, m_gen=8, m_eval=10)


def tiny_config(**kw):
    return TrainConfig(**{**TINY, "epochs": 2, **kw})


@pytest.fixture(scope="session")
def small_data():
    ds, sem, _ = make_synthetic(SynthSpec(samples_per_class=20, num_seen=6, num_unseen=3))
    return ds, sem


@pytest.fixture(scope="session")
def default_data():
    ds, sem, _ = make_synthetic(SynthSpec())
    return ds, sem


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
