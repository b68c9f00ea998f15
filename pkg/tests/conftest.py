import numpy as np
import pytest

from odetwin.dynamics import HpParams, Lorenz96Params, ReferenceConfig, Waveform, generate_reference

CRITERIA = {}


def record_criterion(number, ok, detail):
    """One pass/fail line per acceptance criterion, printed after the run."""
    line = f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture(scope="session")
def lorenz_ref():
    return generate_reference(Lorenz96Params())


@pytest.fixture(scope="session")
def hp_refs():
    sine = Waveform("sine", 3.0, 2.0)
    tri = Waveform("triangular", 3.0, 2.0)
    hp = HpParams()
    return {
        "sine": sine,
        "tri": tri,
        "ref": generate_reference(hp, ReferenceConfig(501, 1e-3, (0.1,), drive=sine)),
        "held": generate_reference(hp, ReferenceConfig(501, 1e-3, (0.1,), drive=tri)),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hp_twin(hp_refs):
    from odetwin.training import HP_TRAIN, train_hp_twin

    return train_hp_twin(hp_refs["ref"], hp_refs["sine"], HP_TRAIN)
