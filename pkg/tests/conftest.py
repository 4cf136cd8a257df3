import json
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from groupoidlin.cli import main


@dataclass
class CliRun:
    code: int
    out: Path
    seconds: float

    def json(self, name):
        return json.loads((self.out / name).read_text())

    def bytes(self, name):
        return (self.out / name).read_bytes()


class CliRunner:
    """Runs the command line once per argument list and caches the outcome."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def __call__(self, command, config, *extra):
        key = (command, config) + extra
        if key not in self.cache:
            out = self.root / f"run{len(self.cache)}"
            t0 = time.perf_counter()
            code = main([command, "--config", config, "--out", str(out), *extra])
            self.cache[key] = CliRun(code, out, time.perf_counter() - t0)
        return self.cache[key]


@pytest.fixture(scope="session")
def cli(tmp_path_factory):
    return CliRunner(tmp_path_factory.mktemp("cli"))


ACCEPTANCE = pytest.StashKey[list]()


class Acceptance:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, lines):
        self.lines = lines

    def check(self, number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        self.lines.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def acceptance(request):
    return Acceptance(request.config.stash.setdefault(ACCEPTANCE, []))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
