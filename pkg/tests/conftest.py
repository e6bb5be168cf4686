import pytest

from doppelbaum.estimator import PostEditor
from doppelbaum.synthetic import copy_task

COPY_OVERRIDES = {
    "vocab": {"size": 100},
    "model": {"dropout": 0.0},
    "train": {"lr_factor": 1.0, "warmup_steps": 200, "max_steps": 1000, "regularizer": "doppelbaum"},
}


@pytest.fixture(scope="session")
def copy_editor():
    """Desk-size model trained to copy its MT input (about 1.5 minutes on one core)."""
    train = copy_task(500, seed=1)
    X = [(s, m) for s, m, _ in train]
    y = [p for _, _, p in train]
    return PostEditor("desk", overrides=COPY_OVERRIDES, seed=1128).fit(X, y)


@pytest.fixture(scope="session")
def copy_heldin():
    """100 copy triples drawn from the training word list."""
    return copy_task(100, seed=99)


# -- acceptance verdicts ----------------------------------------------------------

_VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _VERDICTS[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, status, detail = _VERDICTS[number]
        line = f"CRITERION {number} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
