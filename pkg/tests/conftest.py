import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from miold.geometry import Point
from miold.model.files import load_system

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def corpus_case(name, output_set=None, regime=None):
    """(system file, system with the chosen outputs, analysis point), cached across tests."""
    f = load_system(name, regime)
    S = f.system if output_set is None else f.system.with_outputs(f.outputs(output_set))
    return f, S, Point.for_system(S, f.point_x, f.point_v)


# every (system, output set, regime) combination in the bundled corpus
CORPUS_CASES = [
    ("iwp", None, None), ("iwp", "combined", None), ("iwp", "reshaped", None),
    ("tora3", None, None), ("tora3", "flat", None),
    ("double_pendulum_base", None, None), ("double_pendulum_base", "toras", None),
    ("double_pendulum_toras", None, None), ("double_pendulum_toras", "configurations", None),
    ("example1", None, "coupled"), ("example1", None, "velocity_coupled"),
    ("example1", None, "quadratic"),
]

SOLVABLE_CASES = [c for c in CORPUS_CASES
                  if c not in {("iwp", "reshaped", None), ("example1", None, "velocity_coupled"),
                               ("example1", None, "quadratic")}]


def case_id(case):
    name, key, regime = case
    return "-".join(x for x in (name, key, regime) if x)


# ---------------------------------------------------------------- acceptance reporting

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        item.config._criteria[number] = (title, rep.outcome, rep.duration)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        title, outcome, duration = results[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title} ({duration:.2f} s)")
