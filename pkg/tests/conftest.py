from __future__ import annotations

import os
import time
from pathlib import Path

import pytest

from neighbor_confidence import pipeline
from neighbor_confidence.config import demo_config

# one "criterion N: PASS/FAIL ..." line per acceptance test
ACCEPTANCE_LINES: list[str] = []
# wall-clock seconds per pipeline step, keyed by run directory
STEP_SECONDS: dict[Path, dict[str, float]] = {}


def run_demo_in(root: Path, out: str = "demo") -> Path:
    """Full pipeline on the built-in demo config, with a cwd-relative output dir.

    The run directory name is relative so two runs in different roots write
    identical config.json files.
    """
    cwd = os.getcwd()
    root.mkdir(parents=True, exist_ok=True)
    cfg = demo_config().with_overrides(out=out)
    steps = {
        "generate": pipeline.generate, "train": pipeline.train, "embed": pipeline.embed,
        "fit": pipeline.fit, "score": pipeline.score, "select": pipeline.select, "report": pipeline.report,
    }
    timings = {}
    os.chdir(root)
    try:
        for name, step in steps.items():
            t0 = time.perf_counter()
            step(cfg)
            timings[name] = time.perf_counter() - t0
    finally:
        os.chdir(cwd)
    STEP_SECONDS[root / out] = timings
    return root / out


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory) -> Path:
    return run_demo_in(tmp_path_factory.mktemp("demo_a"))


@pytest.fixture(scope="session")
def demo_rerun(tmp_path_factory) -> Path:
    return run_demo_in(tmp_path_factory.mktemp("demo_b"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
