import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from driftbench.data import SynthSpec, prepare_scenario, synth_generate

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def synth_pair():
    return synth_generate(SynthSpec(seed=0))


@pytest.fixture(scope="session")
def scenario2(synth_pair):
    train, test = synth_pair
    return prepare_scenario(train, test, 2, 0)


@pytest.fixture(scope="session")
def small_scenario():
    """Tiny 4-class, 2-task problem for fast loop-level tests."""
    train, test = synth_generate(SynthSpec(n_classes=4, n_steps=5, n_features=3, n_train=64, n_test=32, seed=3))
    return prepare_scenario(train, test, 2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    detail = getattr(item, "criterion_detail", "")
    _CRITERIA[number] = ("PASS" if call.excinfo is None else "FAIL", title, detail)


@pytest.fixture
def report_detail(request):
    """Attach a one-line measurement to the criterion summary."""
    def attach(text):
        request.node.criterion_detail = text
    return attach


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
