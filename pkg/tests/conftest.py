import pytest

from confspec.domains import FactorSpec, make_domain, make_factor
from confspec.operators import ConjugatedFamily, conformal_laplacian_torus, dirac_circle

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def torus16():
    return conformal_laplacian_torus(make_domain("torus2", 16))


@pytest.fixture(scope="session")
def dirac64():
    return dirac_circle(make_domain("circle", 64))


@pytest.fixture(scope="session")
def dirac64_periodic():
    return dirac_circle(make_domain("circle", 64), "periodic")


@pytest.fixture(scope="session")
def torus_cos2x(torus16):
    return ConjugatedFamily(torus16, make_factor(torus16.domain, FactorSpec.single(2)))


@pytest.fixture(scope="session")
def torus_const(torus16):
    return ConjugatedFamily(torus16, make_factor(torus16.domain, FactorSpec.constant(1.0)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
