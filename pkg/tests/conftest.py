import numpy as np
import pytest

from depthfuse.camera import CameraIntrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def camera():
    return CameraIntrinsics(f=100.0, cu=7.5, cv=5.5)


def random_mask(rng, shape, p=0.8):
    mask = rng.random(shape) < p
    mask[0, 0] = True
    return mask


_CRITERIA = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ok = report.when == "call" and report.outcome == "passed"
        detail = props.get("detail", "")
        if hasattr(report, "wasxfail"):
            detail = f"{detail} (expected failure: {report.wasxfail})".strip()
        prev = _CRITERIA.get(key)
        _CRITERIA[key] = (ok and (prev is None or prev[0]), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(str(k).split("-")[0]), str(k))):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
