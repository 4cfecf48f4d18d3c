import pytest

_RESULTS = {}


@pytest.fixture
def criterion(request):
    """Per-criterion record; ``detail`` is echoed in the acceptance summary."""
    info = {"detail": ""}
    request.node._criterion = info
    return info


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    info = getattr(item, "_criterion", None)
    if info is not None and rep.when == "call":
        _RESULTS[item.name] = (rep.passed, info["detail"], rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail, dur) in _RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  [{dur:.1f}s]  {detail}")
