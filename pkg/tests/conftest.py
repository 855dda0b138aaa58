import sys

import pytest

from ffdr.corpus import Document, tokenize


def doc(doc_id, text, max_tokens=128):
    return Document(doc_id, text, tuple(tokenize(text, max_tokens)))


@pytest.fixture
def three_docs():
    return [doc("d1", "a b"), doc("d2", "a c"), doc("d3", "b b c")]


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
