import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Twenty molecules with hand-derived formulas (heavy atoms + implicit H).
CORPUS20 = [
    ("CCO", {"C": 2, "H": 6, "O": 1}),
    ("c1ccccc1", {"C": 6, "H": 6}),
    ("Cc1ccccc1", {"C": 7, "H": 8}),
    ("CC(=O)O", {"C": 2, "H": 4, "O": 2}),
    ("CC(=O)Nc1ccc(O)cc1", {"C": 8, "H": 9, "N": 1, "O": 2}),
    ("c1ccncc1", {"C": 5, "H": 5, "N": 1}),
    ("c1ccc2ccccc2c1", {"C": 10, "H": 8}),
    ("C1CCCCC1", {"C": 6, "H": 12}),
    ("OC1CCNCC1", {"C": 5, "H": 11, "N": 1, "O": 1}),
    ("c1ccoc1", {"C": 4, "H": 4, "O": 1}),
    ("c1ccsc1", {"C": 4, "H": 4, "S": 1}),
    ("c1cc[nH]c1", {"C": 4, "H": 5, "N": 1}),
    ("ClC(Cl)Cl", {"C": 1, "H": 1, "Cl": 3}),
    ("FC(F)(F)c1ccccc1", {"C": 7, "H": 5, "F": 3}),
    ("CS(=O)(=O)C", {"C": 2, "H": 6, "O": 2, "S": 1}),
    ("OP(=O)(O)O", {"H": 3, "O": 4, "P": 1}),
    ("C#N", {"C": 1, "H": 1, "N": 1}),
    ("Brc1ccc(I)cc1", {"C": 6, "H": 4, "Br": 1, "I": 1}),
    ("CC(C)(C)N", {"C": 4, "H": 11, "N": 1}),
    ("O=C([O-])CC1CC1", {"C": 5, "H": 7, "O": 2}),
]

CORPUS20_SMILES = [s for s, _ in CORPUS20]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: long-running training tests")
    warnings.filterwarnings("ignore", category=RuntimeWarning, module="masskit")


_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {e['title']}")
