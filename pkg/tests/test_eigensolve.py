from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confspec.eigensolve import (Spectrum, cluster, cluster_indices, gauge_fix, gram, householder_tridiagonalize,
                                 jacobi_eigh, multiplicities, residuals, solve_generalized, solve_symmetric,
                                 spectrum_csv, tridiagonal_ql)

BACKENDS = ["lapack", "ql", "jacobi"]


def exact_char_poly(a):
    """det(x I - A) coefficients by exact cofactor-free Gaussian elimination on a polynomial-free route:
    Newton identities on exact power traces."""
    n = a.shape[0]
    m = [[Fraction(float(v)) for v in row] for row in a]
    power = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    traces = []
    for _ in range(n):
        power = [[sum(power[i][k] * m[k][j] for k in range(n)) for j in range(n)] for i in range(n)]
        traces.append(sum(power[i][i] for i in range(n)))
    e = [Fraction(1)]
    for k in range(1, n + 1):
        e.append(sum((-1) ** (i - 1) * e[k - i] * traces[i - 1] for i in range(1, k + 1)) / k)
    return [(-1) ** k * e[k] for k in range(n + 1)]


def oracle_eigenvalues(a):
    coeffs = exact_char_poly(a)
    with mpmath.workdps(60):
        roots = mpmath.polyroots([mpmath.mpf(c.numerator) / c.denominator for c in coeffs], maxsteps=400, extraprec=400)
        return np.sort(np.array([float(mpmath.re(r)) for r in roots]))


@pytest.mark.parametrize("method", BACKENDS)
def test_random_6x6_against_char_poly_oracle(method):
    rng = np.random.default_rng(2024)
    for _ in range(50):
        b = rng.standard_normal((6, 6))
        a = 0.5 * (b + b.T)
        spec = solve_symmetric(a, method=method)
        np.testing.assert_allclose(spec.eigenvalues, oracle_eigenvalues(a), atol=1e-9, rtol=0)
        v = spec.eigenvectors
        assert np.max(np.abs(v @ np.diag(spec.eigenvalues) @ v.T - a)) <= 1e-8


def test_householder_reduction():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((9, 9))
    a = b + b.T
    d, e, q = householder_tridiagonalize(a)
    t = np.diag(d) + np.diag(e[: len(d) - 1], 1) + np.diag(e[: len(d) - 1], -1)
    np.testing.assert_allclose(q.T @ q, np.eye(9), atol=1e-13)
    np.testing.assert_allclose(q @ t @ q.T, a, atol=1e-12)


def test_ql_on_known_tridiagonal():
    # second-difference matrix: eigenvalues 2 - 2 cos(k pi / (n + 1))
    n = 12
    d = np.full(n, 2.0)
    e = np.full(n, -1.0)
    vals, vecs = tridiagonal_ql(d, e, np.eye(n))
    exact = 2 - 2 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1))
    np.testing.assert_allclose(vals, exact, atol=1e-13)


def test_jacobi_diagonal_and_degenerate():
    vals, vecs = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(vals, [1, 2, 3])
    a = np.ones((4, 4))
    vals, _ = jacobi_eigh(a)
    np.testing.assert_allclose(vals, [0, 0, 0, 4], atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.just(10)), elements=st.floats(-10, 10)))
def test_backends_agree(block):
    n = block.shape[0]
    b = block[:, :n]
    a = b + b.T
    ref = np.linalg.eigvalsh(a)
    scale = max(1.0, np.max(np.abs(ref)))
    for method in ("ql", "jacobi"):
        spec = solve_symmetric(a, method=method)
        np.testing.assert_allclose(spec.eigenvalues, ref, atol=1e-11 * scale)
        np.testing.assert_allclose(gram(spec), np.eye(n), atol=1e-11)


@pytest.mark.parametrize("method", ["lapack", "ql"])
def test_degenerate_torus(torus16, method):
    spec = solve_symmetric(torus16.background_matrix, torus16.weights, method=method)
    assert [m for _, m in multiplicities(spec)[:5]] == [1, 4, 4, 4, 8]
    assert np.max(residuals(torus16.background_matrix, spec)) < 1e-10
    np.testing.assert_allclose(gram(spec), np.eye(256), atol=1e-11)


def test_weighted_orthonormality():
    w = np.array([1.0, 2.0, 0.5])
    s = np.sqrt(w)
    b = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
    a = b * s[None, :] / s[:, None]  # W^{1/2} A W^{-1/2} = b is symmetric
    spec = solve_symmetric(a, w)
    np.testing.assert_allclose(gram(spec), np.eye(3), atol=1e-13)
    np.testing.assert_allclose(spec.eigenvalues, np.linalg.eigvalsh(b), atol=1e-13)


def test_rejects_bad_input():
    with pytest.raises(ValueError, match="symmetric"):
        solve_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        solve_symmetric(np.ones((2, 3)))
    with pytest.raises(ValueError):
        solve_symmetric(np.eye(2), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        solve_symmetric(np.eye(2), method="power")
    with pytest.raises(ValueError):
        solve_symmetric(np.array([[np.nan, 0], [0, 1]]))


def test_generalized_problem():
    rng = np.random.default_rng(5)
    b = rng.standard_normal((7, 7))
    k = b @ b.T
    m = rng.uniform(0.5, 2.0, 7)
    spec = solve_generalized(k, m)
    v = spec.eigenvectors
    np.testing.assert_allclose(k @ v, (m[:, None] * v) * spec.eigenvalues[None, :], atol=1e-10)
    np.testing.assert_allclose(v.T @ (m[:, None] * v), np.eye(7), atol=1e-12)
    with pytest.raises(ValueError):
        solve_generalized(k, -m)


def test_sign_fixing_is_deterministic(torus16):
    s1 = solve_symmetric(torus16.background_matrix, torus16.weights)
    s2 = solve_symmetric(np.array(torus16.background_matrix), torus16.weights)
    np.testing.assert_array_equal(s1.eigenvectors, s2.eigenvectors)


def test_cluster_indices():
    vals = np.array([0.0, 1.0, 1.0 + 1e-12, 2.0, 2.0 + 1e-3])
    assert cluster_indices(vals, 1e-8) == [[0], [1, 2], [3], [4]]
    assert cluster_indices(vals, 1e-3) == [[0], [1, 2], [3, 4]]
    with pytest.raises(ValueError):
        cluster_indices(vals, 0.0)


def test_cluster_and_gauge(torus16):
    spec = solve_symmetric(torus16.background_matrix, torus16.weights)
    es = cluster(spec)[1]
    assert es.multiplicity == 4 and abs(es.value - 1) < 1e-12
    x = torus16.domain.nodes[:, 0]
    fixed = gauge_fix(es.basis, spec.weights, np.cos(2 * x))
    obs = fixed.T @ ((spec.weights * np.cos(2 * x))[:, None] * fixed)
    assert np.max(np.abs(obs - np.diag(np.diag(obs)))) < 1e-12
    np.testing.assert_allclose(gram(fixed, spec.weights), np.eye(4), atol=1e-12)


def test_spectrum_csv_format():
    spec = Spectrum(np.array([0.1, 1.0, 1.0]), np.eye(3), np.ones(3))
    lines = spectrum_csv(spec).splitlines()
    assert lines[0] == "index,eigenvalue,multiplicity_cluster_id"
    assert lines[1] == "0,0.10000000000000001,0"
    assert lines[3].endswith(",1")
    assert float(lines[1].split(",")[1]) == 0.1
