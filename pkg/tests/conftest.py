import pytest
from hypothesis import HealthCheck, settings

from linkmix.generator import GeneratorConfig, StrategyMix, generate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_generation():
    return generate(GeneratorConfig(seed=11, n_events=1000, rates=(0.05, 0.25, 0.3, 0.4)))


@pytest.fixture(scope="session")
def medium_generation():
    cfg = GeneratorConfig(seed=5, n_events=12_000, rates=(0.01, 0.19, 0.3, 0.5),
                          mix=StrategyMix(0.2, 0.6, 0.2))
    return generate(cfg)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
