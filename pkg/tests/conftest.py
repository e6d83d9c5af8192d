import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


class _Recorder:
    def __init__(self, label: str):
        self.label = label
        self.detail = ""

    def check(self, ok: bool, detail: str) -> None:
        self.detail = detail
        _RESULTS[self.label] = (bool(ok), detail)
        assert ok, f"{self.label}: {detail}"


@pytest.fixture
def criterion(request):
    """Record one acceptance line; a test that errors before reporting counts as FAIL."""
    marker = request.node.get_closest_marker("criterion")
    rec = _Recorder(marker.args[0] if marker else request.node.name)
    yield rec
    if rec.label not in _RESULTS:
        _RESULTS[rec.label] = (False, "test raised before reporting")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS, key=lambda s: int(s.split()[0][1:])):
        ok, detail = _RESULTS[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
