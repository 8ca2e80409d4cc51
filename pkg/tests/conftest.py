import gzip
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    _ACCEPTANCE_LINES.append(line)
    return ok


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def hour_lines(h):
    """Lines of the fixture file for hour ``h``; the zh total is ``1000 * (h + 1) + 10``."""
    return [
        f"zh Page_{h} {1000 * (h + 1)} 100",
        "zh %E7%BB%B4%E5%9F%BA 10 5",
        "zh.m Mobile 99 1",
        "zh.b Book 5 1",
        "en Main_Page 7 1",
        "zh broken line",
        "",
    ]


FIXTURE_TOTALS = [1000 * (h + 1) + 10 for h in range(24)]


def write_pagecounts_fixture(directory, hours=24, gz=True):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for h in range(hours):
        text = "\n".join(hour_lines(h)).encode("utf-8")
        name = f"pagecounts-20140901-{h:02d}0000"
        if gz:
            (directory / (name + ".gz")).write_bytes(gzip.compress(text, mtime=0))
        else:
            (directory / name).write_bytes(text)
    return directory


@pytest.fixture
def pagecounts_dir(tmp_path):
    return write_pagecounts_fixture(tmp_path / "pc")
