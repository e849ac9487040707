import numpy as np
import pytest

from rplauth.topology import connected_disk


def disk_corpus(count, seed=0, n_range=(8, 64)):
    """Connected random unit-disk graphs, as explicit topology specs."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        # radius scaled so that sparse and dense graphs both show up
        radius = float(rng.uniform(1.6, 2.6) / np.sqrt(n))
        out.append(connected_disk(n, radius, seed=1000 * seed + i).to_json())
    return out


@pytest.fixture(scope="session")
def corpus50():
    return disk_corpus(50, seed=1)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
