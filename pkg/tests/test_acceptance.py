"""Acceptance battery: one test per criterion, each printing a pass/fail line."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from confspec.verify import CRITERIA, run_criterion

import conftest


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA], ids=[f"c{c[0]:02d}-{c[1].replace(' ', '-')}" for c in CRITERIA])
def test_criterion(number):
    result = run_criterion(number)
    line = result.line()
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line


def test_dirac_oracle_independent():
    # lowest positive eigenvalue of the deformed circle Dirac operator is pi / L with L = int e^{eps f / 2}
    from confspec.domains import FactorSpec, make_domain, make_factor
    from confspec.operators import ConjugatedFamily, dirac_circle
    from confspec.perturb import solve_family
    op = dirac_circle(make_domain("circle", 64))
    fam = ConjugatedFamily(op, make_factor(op.domain, FactorSpec.single(1)))
    grid = (0.1, 0.4, 0.5)
    for eps, spec in zip(grid, solve_family(fam, grid)):
        length = quad(lambda x: math.exp(eps * math.cos(x) / 2), 0, 2 * math.pi, epsabs=1e-14)[0]
        pos = spec.eigenvalues[spec.eigenvalues > 0]
        assert abs(pos.min() - math.pi / length) < 1e-10
    assert abs(np.float64(math.pi / quad(lambda x: math.exp(0.2 * math.cos(x)), 0, 2 * math.pi)[0]) - 0.4950372) < 1e-7
