import numpy as np
import pytest

from hyperkl.forward import DiffusionConfig, ObservationOperator
from hyperkl.kernels import Grid1D, SquaredExponential, UniformLengthPrior, assemble_cov_matrix, average_kernel
from hyperkl.kl import decompose
from hyperkl.pce import TrainingSpec, build_surrogate, observation_model

SE = SquaredExponential()


@pytest.fixture(scope="session")
def grid56():
    return Grid1D(56)


@pytest.fixture(scope="session")
def cbar56(grid56):
    """Averaged-kernel reference on the FE mesh, six modes."""
    k = average_kernel(SE, UniformLengthPrior(), grid56)
    return decompose(assemble_cov_matrix(k, grid56, None), 6)


@pytest.fixture(scope="session")
def cbar128():
    g = Grid1D(128)
    k = average_kernel(SE, UniformLengthPrior(), g)
    return decompose(assemble_cov_matrix(k, g, None), 25)


@pytest.fixture(scope="session")
def obs_setup():
    return DiffusionConfig(sync=13), ObservationOperator.uniform()


@pytest.fixture(scope="session")
def desk_surrogate(cbar56, obs_setup):
    """K = 6, o = 5 observation surrogate on the averaged reference."""
    cfg, op = obs_setup
    model = observation_model(cfg, op)
    return build_surrogate(model, cbar56, TrainingSpec(order=5)), model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------ acceptance log

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
