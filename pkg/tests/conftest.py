import numpy as np
import pytest

from thermotact.calibration import CalibrationModel, LinearGain, fit_temperature_curve, truth_samples
from thermotact.sensor import ContactScenario, SensorConfig, TruthCurve, render_frame


@pytest.fixture(scope="session")
def config():
    return SensorConfig()


@pytest.fixture(scope="session")
def rest_frame(config):
    return render_frame(ContactScenario(), config)


@pytest.fixture(scope="session")
def truth_curve():
    return TruthCurve()


@pytest.fixture(scope="session")
def truth_calib(truth_curve):
    """Temperature curve fitted from noise-free truth samples, unit gains."""
    curve = fit_temperature_curve(truth_samples(truth_curve))
    return CalibrationModel(curve, LinearGain(1.0, 0.0, 1.0), LinearGain(1.0, 0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Records one verdict per acceptance criterion for the summary."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
