import numpy as np
import pytest

from kelab.geometry import PoleSpec, background_form, build_torus_fiber, family
from kelab.solver import continuation_solve

KLT_POLE = PoleSpec([0.5 + 0.5j], [-0.5])


def klt_family(N, M=14, a=-0.5, normalize=True, volume=None):
    fiber = build_torus_fiber(1, 1j, N)
    form = background_form(fiber, "flat", volume=volume)
    return family(fiber, form, PoleSpec([0.5 + 0.5j], [a]), t_max=0.5, ratio=0.5, M=M,
                  append_zero=True, normalize=normalize)


@pytest.fixture(scope="session")
def klt64():
    """Solved default klt family (a = -0.5, t down to 0) at N = 64."""
    fam = klt_family(64)
    return fam, continuation_solve(fam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------------ criterion report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


def pytest_runtest_logreport(report):
    k = _CRITERIA_BY_NODE.get(report.nodeid)
    if k is None:
        return
    if report.when == "call" or report.failed:
        ok = report.passed or (report.when != "call" and not report.failed)
        _CRITERIA.setdefault(k, []).append((report.nodeid, ok and not report.failed))


_CRITERIA_BY_NODE = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA_BY_NODE[item.nodeid] = int(mark.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        results = _CRITERIA[k]
        ok = all(r for _, r in results)
        failed = [n.split("::")[-1] for n, r in results if not r]
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'} ({len(results)} tests)"
        if failed:
            line += " failed: " + ", ".join(failed)
        terminalreporter.write_line(line)
