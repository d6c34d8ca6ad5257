"""Shared fixtures and the acceptance summary hook."""
from __future__ import annotations

import numpy as np
import pytest

from facadescan.ingest import GrayImage

# One line per acceptance criterion, echoed after the test run so the
# pass/fail verdicts are visible without digging through captured output.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log() -> list[str]:
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def textured_image() -> GrayImage:
    """A 240x360 frame with enough texture for matching tests."""
    rng = np.random.default_rng(7)
    pixels = rng.integers(0, 256, size=(240, 360), dtype=np.uint8)
    return GrayImage(pixels)
