import numpy as np
import pytest
from hypothesis import settings

from sscunet.synth import SynthConfig, make_scene

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_bundle():
    """32x32 scene with 4 endmembers and 70 bands (enough for the SCAE)."""
    return make_scene(SynthConfig(height=32, width=32, p=4, bands=70, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one acceptance outcome."""
    def record(n, passed, detail):
        request.config.acceptance[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
