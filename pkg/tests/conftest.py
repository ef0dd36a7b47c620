import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from o1transducer.model import ModelConfig, ModelParams, ToyTransducer

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tiny_model(seed: int, vocab_size: int = 3, input_dim: int = 3, hidden: int = 6, scale: float = 1.0) -> ToyTransducer:
    """Small random transducer with weights large enough to give peaked outputs."""
    config = ModelConfig(input_dim=input_dim, vocab_size=vocab_size, hidden=hidden, embed=4)
    rng = np.random.default_rng(seed)
    return ToyTransducer(ModelParams(config, rng.uniform(-scale, scale, size=config.param_count)))


@pytest.fixture
def make_model():
    return tiny_model


# acceptance criteria report one line each; collected here and repeated in
# the terminal summary so they survive output capturing
CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    def report(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
        CRITERIA.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
