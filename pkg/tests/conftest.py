import pytest

_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    props = dict(item.user_properties)
    _acceptance.append((marker.args[0], marker.args[1], report.passed, props.get("metric", ""),
                        props.get("elapsed"), marker.kwargs.get("limit_s")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, metric, elapsed, limit in sorted(_acceptance):
        timing = f"{elapsed:.1f} s / limit {limit:g} s" if elapsed is not None else f"limit {limit:g} s"
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title} | {metric} | {timing}")
