import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confspec.domains import FactorSpec, make_domain
from confspec.eigensolve import Eigenspace, cluster, cluster_indices, solve_symmetric
from confspec.operators import conformal_laplacian_torus
from confspec.splitter import (RIGID, SPLITTABLE, TRIVIAL, accumulate_exponent, epsilon_budget,
                               find_splitting_factor, genericity_loop, plan_steps_from_dict, pointwise_gram,
                               replay_plan, rigidity_score, safety_layout)


def _clusters(op, lo=-math.inf, hi=math.inf, min_mult=1):
    spec = solve_symmetric(op.background_matrix, op.weights, rank=op.rank)
    return [es for es in cluster(spec) if lo <= es.value <= hi and es.multiplicity >= min_mult and abs(es.value) > 1e-9]


def _at(op, value):
    return next(es for es in _clusters(op) if abs(es.value - value) < 1e-6)


def test_dirac_clusters_rigid(dirac64):
    for es in _clusters(dirac64, -5, 5):
        rep = rigidity_score(es)
        assert rep.multiplicity == 2 and rep.score <= 1e-10 and rep.verdict == RIGID


def test_torus_lambda1_not_rigid(torus16):
    rep = rigidity_score(_at(torus16, 1.0))
    assert rep.normalized_score >= 0.01 and rep.verdict == SPLITTABLE


def test_scalar_eigenspaces_never_rigid(torus16):
    for es in _clusters(torus16, 0.5, 40, min_mult=2):
        assert rigidity_score(es).verdict == SPLITTABLE


def test_simple_eigenspace_is_trivial(torus16):
    es = _at(torus16, 1.0)
    single = Eigenspace(es.value, es.basis[:, :1], 1, es.cluster_tol, es.indices[:1], es.eigenvalues[:1],
                        es.weights, es.rank)
    rep = rigidity_score(single)
    assert rep.verdict == TRIVIAL and math.isinf(rep.score)
    assert rep.to_dict()["score"] is None


def _random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigidity_score_basis_invariant(seed):
    from confspec.domains import make_domain as md
    from confspec.operators import conformal_laplacian_torus as lap, dirac_circle
    rng = np.random.default_rng(seed)
    for op, value in ((lap(md("torus2", 8)), 1.0), (dirac_circle(md("circle", 16)), 1.5)):
        es = _at(op, value)
        q = _random_orthogonal(rng, es.multiplicity)
        mixed = Eigenspace(es.value, es.basis @ q, es.multiplicity, es.cluster_tol, es.indices,
                           es.eigenvalues, es.weights, es.rank)
        assert abs(rigidity_score(mixed).score - rigidity_score(es).score) <= 1e-10


def test_pointwise_gram_trace_integrates_to_multiplicity(torus16):
    es = _at(torus16, 2.0)
    g = pointwise_gram(es)
    assert abs(np.dot(torus16.domain.quad_weights, np.trace(g, axis1=1, axis2=2)) - 4) < 1e-10


def test_find_splitting_factor_torus(torus16):
    search = find_splitting_factor(_at(torus16, 1.0), torus16)
    assert search.status == "split"
    assert search.factor.description == "1*cos(2x)"
    np.testing.assert_allclose(search.first_order.predicted_slopes, [-0.5, 0, 0, 0.5], atol=1e-12)
    spreads = dict(search.spreads)
    assert abs(spreads["1*cos(2y)"] - spreads["1*cos(2x)"]) < 1e-12


def test_find_splitting_factor_odd_modes_fail(torus16):
    search = find_splitting_factor(_at(torus16, 1.0), torus16,
                                   [FactorSpec.single(1), FactorSpec.single(1, phase="sin")])
    assert search.status == "unsplittable"
    assert search.rigidity.verdict != RIGID
    assert all(np.max(np.abs(fo.entries)) < 1e-12 for fo in search.first_orders)


def test_find_splitting_factor_dirac_rigid(dirac64):
    search = find_splitting_factor(_at(dirac64, 0.5), dirac64)
    assert search.status == RIGID and search.factor is None
    assert all(fo.identity_deviation() <= 1e-10 for fo in search.first_orders)


def test_rigid_implies_identity_first_order(dirac64):
    for es in _clusters(dirac64, -4, 4):
        search = find_splitting_factor(es, dirac64, max_mode=6)
        if search.rigidity.verdict == RIGID:
            assert all(fo.identity_deviation() <= 1e-10 for fo in search.first_orders)


def test_find_splitting_factor_empty(torus16):
    with pytest.raises(ValueError):
        find_splitting_factor(_at(torus16, 1.0), torus16, [])


def test_epsilon_budget_examples():
    assert abs(epsilon_budget([(1.0, 0.4)], 1.0, -0.5) - math.log(1.4)) < 1e-15
    assert abs(epsilon_budget([(5.0, 0.5)], 1.0, -0.5) - math.log(1.1)) < 1e-15
    assert abs(epsilon_budget([(1.0, 0.4)], 2.0, -0.5) - math.log(1.4) / 2) < 1e-15
    assert epsilon_budget([(0.0, 1.0)], 1.0, -0.5) == math.inf
    with pytest.raises(ValueError):
        epsilon_budget([(1.0, 0.0)], 1.0, -0.5)


def test_safety_layout_torus(torus16):
    vals = solve_symmetric(torus16.background_matrix, torus16.weights).eigenvalues
    layout, radii = safety_layout(vals, 4.5, 1e-3, 1e-9)
    d = {round(lam, 6): r for lam, r in layout}
    assert set(d) == {1.0, 2.0, 4.0, 5.0}
    # half the 4-5 gap after a gamma margin; the 4.5 boundary is further away
    assert abs(d[5.0] - 0.5 * (1 - 5e-3)) < 1e-12
    assert abs(d[4.0] - 0.5 * (1 - 5e-3)) < 1e-12
    assert abs(d[1.0] - 0.5 * (1 - 2e-3)) < 1e-12
    eps = epsilon_budget(layout, 1.0, -0.5)
    assert abs(eps - math.log1p(0.4975 / 5)) < 1e-12
    _, radii_tight = safety_layout(vals, 4.2, 1e-3, 1e-9)
    assert abs(max(r for i, r in radii_tight.items() if abs(vals[i] - 4) < 1e-6) - 0.2) < 1e-12


def test_loop_torus24():
    op = conformal_laplacian_torus(make_domain("torus2", 24))
    plan = genericity_loop(op, 4.5, 1e-3, 10)
    assert plan.complete and 1 <= len(plan.steps) <= 10
    assert plan.kernel_dimension == 1
    w = np.sort(plan.window_eigenvalues)
    assert len(w) == 12
    assert np.all(np.diff(w) / np.maximum(1, np.abs(w[1:])) >= 1e-3)
    for s in plan.steps:
        assert s.degeneracy_after < s.degeneracy_before
    # replay is bit-identical
    replayed = replay_plan(op, [(s.factor_spec, s.epsilon) for s in plan.steps])
    np.testing.assert_array_equal(replayed.eigenvalues, plan.final_spectrum.eigenvalues)
    data = json.loads(json.dumps(plan.to_dict()))
    again = replay_plan(op, plan_steps_from_dict(data))
    np.testing.assert_array_equal(again.eigenvalues, plan.final_spectrum.eigenvalues)
    assert data["schema"] == 1 and data["final_spectrum"]["count"] == 12


def test_loop_dirac_rigid(dirac64):
    plan = genericity_loop(dirac64, 2.5)
    assert plan.steps == [] and plan.status == "rigid"
    assert len(plan.verdicts) == 4 and all(v["verdict"] == RIGID for v in plan.verdicts)
    assert any("rigid" in line for line in plan.log_lines)


def test_loop_empty_window(torus16):
    plan = genericity_loop(torus16, 0.5)
    assert plan.complete and plan.steps == [] and len(plan.window_eigenvalues) == 0


def test_loop_exhaustion():
    op = conformal_laplacian_torus(make_domain("torus2", 16))
    plan = genericity_loop(op, 4.5, max_steps=1)
    assert plan.status == "exhausted" and len(plan.steps) == 1


def test_loop_rejects_bad_parameters(torus16):
    with pytest.raises(ValueError):
        genericity_loop(torus16, -1.0)
    with pytest.raises(ValueError):
        genericity_loop(torus16, 4.5, gamma=0.0)


def test_exponents_add(torus16):
    steps = [(FactorSpec.single(2), 0.1), (FactorSpec.single(0, 2), -0.05)]
    exp = accumulate_exponent(torus16, steps)
    x, y = torus16.domain.coords()
    np.testing.assert_allclose(exp, 0.1 * np.cos(2 * x) - 0.05 * np.cos(2 * y), atol=1e-15)
