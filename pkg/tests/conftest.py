from __future__ import annotations

from pathlib import Path

import pytest

from bodyct.config import resolve_input
from bodyct.rba.dictionary import load_default

TESTS = Path(__file__).resolve().parent
FIXTURES = Path(resolve_input("bundled:gold_labels.csv")).parent


@pytest.fixture(scope="session")
def rules():
    return load_default()


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def pipeline_steps(out) -> list[list[str]]:
    """The full bundled-fixture pipeline as CLI argument lists."""
    b, o = "bundled:", str(out)
    return [
        ["ingest", "--corpus", b + "synthetic_reports.jsonl", "--out", o],
        ["label", "--corpus", f"{o}/ingested.jsonl", "--out", o],
        ["split", "--labels", f"{o}/labels.csv", "--out", o],
        ["stats", "prevalence", "--labels", f"{o}/labels.csv", "--split", f"{o}/split.csv", "--out", o],
        ["stats", "cooccurrence", "--labels", f"{o}/labels.csv", "--out", o],
        ["eval", "labels", "--labels", f"{o}/labels.csv", "--reference", b + "gold_labels.csv", "--out", o],
        ["eval", "roc", "--predictions", b + "predictions.csv", "--reference", b + "gold_labels.csv",
         "--out", o],
    ]


ACCEPTANCE: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
