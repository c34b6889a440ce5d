import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gwhi import features, synth

settings.register_profile(
    "gwhi", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("gwhi")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return synth.SynthSpec(n_specimens=4, lifetime_range=(14, 18), n_paths=4, freqs_khz=(100, 200), seed=7)


@pytest.fixture(scope="session")
def small_tensor(small_spec):
    ds = synth.SyntheticDataset(small_spec)
    return features.extract_all(ds, features.ExtractionOptions(methods=("raw", "fft")))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, from ``record_property("criterion", ...)``."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call":
                continue
            for name, (number, detail) in (p for p in rep.user_properties if p[0] == "criterion"):
                lines.append((number, f"{outcome[:4].upper()} criterion {number}: {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
