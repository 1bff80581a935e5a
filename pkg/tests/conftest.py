import subprocess

import pytest

from cogniloop.errors import ExtractorNotFound
from cogniloop.media import find_extractor


@pytest.fixture(scope="session")
def ffmpeg():
    try:
        return find_extractor()
    except ExtractorNotFound:
        pytest.skip("no ffmpeg available")


@pytest.fixture(scope="session")
def make_clip(ffmpeg, tmp_path_factory):
    """Render a synthetic test-pattern clip of the given length in seconds."""
    root = tmp_path_factory.mktemp("clips")

    def _make(seconds: float, name: str = "clip") -> str:
        path = root / f"{name}.mp4"
        if not path.exists():
            subprocess.run(
                [
                    ffmpeg, "-v", "error", "-y", "-f", "lavfi",
                    "-i", f"testsrc=duration={seconds}:size=64x48:rate=5",
                    "-pix_fmt", "yuv420p", str(path),
                ],
                check=True,
            )
        return str(path)

    return _make


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------

_criteria: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or len(marker.args) < 2:
        return
    if rep.when != "call" and rep.passed:
        return
    number, title = marker.args[:2]
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    previous = _criteria.get(number)
    if previous is None or previous[1] == "PASS":
        _criteria[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2} [{status}] {title}")
