import numpy as np
import pytest

from gpq.kernels import (
    Exponential,
    Linear,
    Matern32,
    Matern52,
    PeriodicExponential,
    RationalQuadratic,
    SpectralMixture,
    SquaredExponential,
)


def kernel_catalogue():
    """One instance of every kernel family (2-D inputs) plus composites."""
    leaves = {
        "lin": Linear(0.7),
        "se": SquaredExponential(1.3, (0.8,)),
        "se_ard": SquaredExponential(1.1, (0.6, 1.7)),
        "se_inactive": SquaredExponential(0.9, (0.6, 1.7), inactive=(1,)),
        "exp": Exponential(1.2, 0.9),
        "rq": RationalQuadratic(0.8, 1.5, 0.7),
        "m32": Matern32(1.1, 0.9),
        "m52": Matern52(0.9, 1.2),
        "per": PeriodicExponential(1.0, (0.8, 1.3), (1.9, 2.4)),
        "sm": SpectralMixture((0.6, 0.4), ((0.1, 0.3), (-0.2, 0.05)), ((0.05, 0.1), (0.2, 0.03))),
    }
    composites = {
        "sum": leaves["se"] + leaves["lin"],
        "product": leaves["se_ard"] * leaves["exp"],
        "nested": leaves["m32"] * (leaves["rq"] + leaves["per"]),
    }
    return {**leaves, **composites}


KERNELS = kernel_catalogue()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
