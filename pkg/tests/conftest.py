import pytest

from calm.config import resolve_config
from calm.pipeline import features_from_manifest
from calm.synth import StudyConfig, synth_study


@pytest.fixture(scope="session")
def small_study(tmp_path_factory):
    """Four-participant synthetic study (polar ECG only)."""
    out = tmp_path_factory.mktemp("study")
    return synth_study(StudyConfig(n_participants=4, seed=3), out)


@pytest.fixture(scope="session")
def base_config():
    return resolve_config(None, {}, env={})


@pytest.fixture(scope="session")
def small_features(small_study, base_config):
    return features_from_manifest(small_study / "manifest.csv", base_config)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "calm_acceptance", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
