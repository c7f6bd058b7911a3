import os
from pathlib import Path

import numpy as np
import pytest

from taskgraph.corpus import bundled_corpus_dir

GOLDEN = Path(__file__).parent / "golden"


def check_golden(name: str, text: str) -> None:
    """Compare against tests/golden/<name>; REGEN_GOLDENS=1 rewrites the file instead."""
    path = GOLDEN / name
    if os.environ.get("REGEN_GOLDENS") == "1":
        path.write_text(text, encoding="utf-8")
    assert path.exists(), f"missing golden {name}; run with REGEN_GOLDENS=1 once and review it"
    assert text == path.read_text(encoding="utf-8")


class DictEmbedder:
    """Looks sentences up in a fixed table; stands in for a semantic encoder in tests."""

    def __init__(self, table: dict[str, list[float]]):
        self.table = {k: np.asarray(v, dtype=float) / np.linalg.norm(v) for k, v in table.items()}
        self.calls = 0

    def embed(self, sentence: str) -> np.ndarray:
        self.calls += 1
        return self.table[sentence]


@pytest.fixture
def corpus_dir() -> Path:
    return bundled_corpus_dir()


_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    _CRITERIA[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
