import copy

import pytest

from cimf.workspace import Workspace

BBOX = [0.0, 0.0, 960.0, 960.0]


def flood_payload(workflow_type="flood-single", bbox=BBOX, **options):
    payload = {
        "workflow_type": workflow_type,
        "spatial_domain": {"bbox": list(bbox), "crs_label": "local"},
        "temporal_domain": {"start": "2021-12-01", "end": "2021-12-31"},
        "options": {"precipitation": {"synthetic": {"steps": 6, "seed": 1, "peak": 0.05}}},
    }
    payload["options"].update(copy.deepcopy(options))
    return payload


@pytest.fixture
def ws(tmp_path):
    return Workspace.open(tmp_path / "ws", install_builtin=True, workers=4)


@pytest.fixture
def payload():
    return flood_payload


_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or rep.failed:
        prev = _acceptance.get(number)
        if prev is None or prev[1]:
            _acceptance[number] = (title, rep.passed, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, ok, secs = _acceptance[number]
        terminalreporter.write_line(f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}  "
                                    f"({secs:.1f} s)")
