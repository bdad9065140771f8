import pytest
from hypothesis import HealthCheck, settings

from mlsim.scenario import ScenarioConfig

settings.register_profile(
    "mlsim",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("mlsim")

# lines collected by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def small_config(**changes) -> ScenarioConfig:
    """100 steps with a dense burst of departures, so every phase of the mesh runs."""
    base = dict(
        n_vehicles=400,
        n_iterations=2,
        t_end=7.0 + 100 * 6.0 / 3600.0,
        departure_dist=(7.0, 7.02, 7.1, 7.16),
    )
    base.update(changes)
    return ScenarioConfig().replace(**base)


@pytest.fixture
def small():
    return small_config


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
