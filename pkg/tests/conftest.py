import pytest

_criteria: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid): acceptance criterion the test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid = str(marker.args[0])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        xfailed = hasattr(rep, "wasxfail")
        passed = rep.passed and not xfailed
        _criteria.setdefault(cid, []).append((item.name, passed, xfailed, detail))


def _key(cid: str):
    num = "".join(ch for ch in cid if ch.isdigit())
    return (int(num) if num else 99), cid


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=_key):
        results = _criteria[cid]
        ok = all(p for _, p, _, _ in results)
        note = " (known shortfall, see notes)" if any(x for _, _, x, _ in results) else ""
        details = "; ".join(d for _, _, _, d in results if d)
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'}{note}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
