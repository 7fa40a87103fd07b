import numpy as np
import pytest

from shortcut_shield.core import Image, LabeledDataset


def random_image(seed, shape=(8, 6, 3)):
    w, h, c = shape
    return Image(np.random.default_rng(seed).random((c, h, w)))


def random_dataset(seed, n=12, k=3, shape=(8, 6, 3)):
    gen = np.random.default_rng(seed)
    w, h, c = shape
    images = [Image(gen.random((c, h, w))) for _ in range(n)]
    return LabeledDataset(images, [i % k for i in range(n)], k, shape)


@pytest.fixture
def small_ds():
    return random_dataset(0)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    state = {}

    def note(number, text):
        state["number"], state["text"] = number, text

    yield note
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    ACCEPTANCE_LINES.append((state.get("number", "?"), "PASS" if ok else "FAIL",
                             state.get("text", request.node.name)))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(ACCEPTANCE_LINES, key=lambda t: str(t[0]).zfill(3)):
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")
