import pytest

from skewprint.pipeline import build_dataset
from skewprint.simulator import SessionConfig, make_device_fleet, simulate_session

SMALL_FLEET = {"count_per_model_class": {"A": 3, "B": 2}, "tolerance_ppm": 30.0, "seed": 7}


@pytest.fixture(scope="session")
def small_build():
    """5 devices x 8 sessions, 6 train / 2 eval."""
    return build_dataset(SMALL_FLEET, n_sessions=8, train_count=6, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_build):
    return small_build[2]


@pytest.fixture(scope="session")
def one_session():
    profile = make_device_fleet({"count_per_model_class": {"A": 1}, "seed": 1})[0]
    return simulate_session(profile, SessionConfig(seed=5))


@pytest.fixture
def quiet_session():
    """Noise- and jitter-free session: outlier filtering removes nothing."""
    profile = make_device_fleet({"count_per_model_class": {"A": 1}, "seed": 2})[0]
    cfg = SessionConfig(noise_sigma_cycles=0.0, jitter_sigma={}, seed=9)
    return simulate_session(profile, cfg)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
