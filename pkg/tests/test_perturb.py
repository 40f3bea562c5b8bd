import math

import numpy as np
import pytest

from confspec.domains import FactorSpec, make_factor
from confspec.eigensolve import cluster, solve_symmetric
from confspec.operators import Bidegree, ConjugatedFamily, synthetic_power
from confspec.perturb import (DEFAULT_EPS_GRID, QUALITY_FLOOR, branches_csv, first_order_matrix, growth_bound_check,
                              growth_envelope, kernel_dimension, measured_slopes, no_crossing_radius, slope_report,
                              solve_family, track_branches)


def _cluster_at(op, value):
    spec = solve_symmetric(op.background_matrix, op.weights, rank=op.rank)
    return next(es for es in cluster(spec) if abs(es.value - value) < 1e-6)


def test_default_grid():
    assert sorted(DEFAULT_EPS_GRID) == list(DEFAULT_EPS_GRID)
    assert 0.0 in DEFAULT_EPS_GRID and len(DEFAULT_EPS_GRID) == 15


def test_first_order_torus_lambda1(torus_cos2x):
    es = _cluster_at(torus_cos2x.operator, 1.0)
    fo = first_order_matrix(es, torus_cos2x.factor, torus_cos2x.operator)
    np.testing.assert_allclose(fo.predicted_slopes, [-0.5, 0, 0, 0.5], atol=1e-12)
    assert abs(fo.spread - 1.0) < 1e-12


def test_first_order_constant_factor_is_minus_lambda(torus_const):
    for lam in (1.0, 2.0, 5.0):
        es = _cluster_at(torus_const.operator, lam)
        fo = first_order_matrix(es, torus_const.factor, torus_const.operator)
        np.testing.assert_allclose(fo.predicted_slopes, -lam, atol=1e-11)
        assert fo.identity_deviation() < 1e-11


def test_first_order_rejects_kernel(torus_cos2x):
    es = _cluster_at(torus_cos2x.operator, 0.0)
    with pytest.raises(ValueError, match="zero"):
        first_order_matrix(es, torus_cos2x.factor, torus_cos2x.operator)


def test_track_constant_factor_exact(torus_const):
    branches = track_branches(torus_const, window=(0.5, 10.5))
    for b in branches:
        np.testing.assert_allclose(b.values, np.exp(-b.eps_grid) * b.origin_value, rtol=1e-12)
        assert abs(b.predicted_slope + b.origin_value) < 1e-10


def test_track_cos2x_slopes(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(0.5, 4.5))
    assert len(branches) == 12
    slopes = measured_slopes(branches, 1e-3)
    values = {br.origin_cluster: br.origin_value for br in branches}
    expected = {1.0: [-0.5, 0, 0, 0.5], 2.0: [-1, -1, 1, 1], 4.0: [0, 0, 0, 0]}
    for cid, s in slopes.items():
        np.testing.assert_allclose(s, expected[round(values[cid])], atol=1e-4)


def test_slope_first_order_convergence(torus_cos2x):
    steps = [1e-2, 5e-3, 1e-3, 5e-4]
    grid = sorted({0.0, *steps, *(-h for h in steps)})
    branches = track_branches(torus_cos2x, grid, window=(0.5, 2.5))
    errs = [max(abs(b.central_slope(h) - b.predicted_slope) for b in branches) for h in steps]
    assert errs[2] <= 1e-4
    for coarse, fine in zip(errs[:-1], errs[1:]):
        if coarse > 1e-11:
            assert fine <= 0.5 * coarse


def test_sum_rule(torus_cos2x):
    es = _cluster_at(torus_cos2x.operator, 2.0)
    fo = first_order_matrix(es, torus_cos2x.factor, torus_cos2x.operator)
    branches = track_branches(torus_cos2x, window=(1.5, 2.5))
    total = sum(b.central_slope(1e-3) for b in branches)
    assert abs(total - np.trace(fo.entries)) < 1e-6


def test_branches_are_continuous(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(0.5, 10.5))
    s = torus_cos2x.factor.sup_norm
    for b in branches:
        jumps = np.abs(np.diff(b.values))
        allowed = np.abs(b.values[:-1]) * np.expm1(2 * abs(torus_cos2x.eta) * s * np.diff(b.eps_grid)) + 1e-8
        assert np.all(jumps <= allowed)


def test_growth_bound_all_instances(torus_cos2x, dirac64, torus16):
    sq = synthetic_power(torus16, 2, Bidegree(0, 4))
    # well-resolved bands only; the top third of a grid's modes is not tracked
    cases = [(torus_cos2x, (0.5, 30.5)),
             (ConjugatedFamily(dirac64, make_factor(dirac64.domain, FactorSpec.single(1))), (-10.5, 10.5)),
             (ConjugatedFamily(sq, make_factor(sq.domain, FactorSpec.single(1, 1))), (0.5, 30.5))]
    for fam, window in cases:
        branches = track_branches(fam, window=window)
        assert branches
        for b in branches:
            assert growth_bound_check(b, fam.operator, fam.factor, slack=1e-8).passed


def test_growth_bound_constant_factor_tight(torus_const):
    b = track_branches(torus_const, window=(0.5, 1.5))[0]
    rep = growth_bound_check(b, torus_const.operator, torus_const.factor)
    assert rep.passed
    neg = rep.eps < 0
    # e^{-eps} - 1 equals e^{|eps|} - 1 exactly for eps < 0
    np.testing.assert_allclose(rep.deviation[neg], rep.bound[neg], rtol=1e-10)


def test_growth_envelope_scalar():
    assert growth_envelope(2.0, -0.5, 1.0, 0.0) == 0.0
    assert abs(growth_envelope(1.0, -0.5, 1.0, -0.2) - math.expm1(0.2)) < 1e-15


def test_no_crossing_radius():
    r = no_crossing_radius(1.0, 2.0, -0.5, 1.0)
    assert abs(r - math.log(2) / 2) < 1e-15
    assert math.exp(0.2) * 1 < 2 * math.exp(-0.2) and r > 0.2
    with pytest.raises(ValueError):
        no_crossing_radius(2.0, 1.0, -0.5, 1.0)


def test_no_crossing_ordering(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(0.5, 2.5))
    inside = np.abs(branches[0].eps_grid) <= 0.2
    top1 = np.max([b.values for b in branches if round(b.origin_value) == 1], axis=0)
    low2 = np.min([b.values for b in branches if round(b.origin_value) == 2], axis=0)
    assert np.all(top1[inside] < low2[inside])


def test_kernel_dimension_sweeps(torus_cos2x, dirac64, dirac64_periodic):
    assert all(kernel_dimension(s) == 1 for s in solve_family(torus_cos2x, DEFAULT_EPS_GRID))
    anti = ConjugatedFamily(dirac64, make_factor(dirac64.domain, FactorSpec.single(1)))
    assert all(kernel_dimension(s) == 0 for s in solve_family(anti, DEFAULT_EPS_GRID))
    per = ConjugatedFamily(dirac64_periodic, make_factor(dirac64_periodic.domain, FactorSpec.single(2, phase="sin")))
    assert all(kernel_dimension(s) == 2 for s in solve_family(per, DEFAULT_EPS_GRID))
    with pytest.raises(ValueError):
        kernel_dimension(solve_family(per, [0.0])[0], zero_tol=0.0)


def test_quality_and_uncertainty(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(0.5, 4.5))
    for b in branches:
        assert np.all((b.quality >= 0) & (b.quality <= 1 + 1e-12))
        assert b.quality[b.eps_grid == 0] == 1.0
        assert b.uncertain == bool(np.any(b.quality < QUALITY_FLOOR))


def test_track_rejects_grid_without_zero(torus_cos2x):
    with pytest.raises(ValueError):
        track_branches(torus_cos2x, [0.1, 0.2])


def test_track_include_kernel(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(-0.5, 0.5), include_kernel=True)
    assert len(branches) == 1 and np.max(np.abs(branches[0].values)) < 1e-9


def test_reports(torus_cos2x):
    branches = track_branches(torus_cos2x, window=(0.5, 1.5))
    rep = slope_report(branches)
    assert rep["schema"] == 1 and rep["clusters"][0]["multiplicity"] == 4
    assert rep["clusters"][0]["max_abs_error"] < 1e-4
    lines = branches_csv(branches).splitlines()
    assert lines[0] == "eps,branch_id,value,overlap_quality"
    assert len(lines) == 1 + 4 * len(DEFAULT_EPS_GRID)


def test_sorted_growth_check(dirac64):
    from confspec.domains import FactorSpec, make_factor
    from confspec.operators import ConjugatedFamily
    from confspec.perturb import solve_family, sorted_growth_check
    fam = ConjugatedFamily(dirac64, make_factor(dirac64.domain, FactorSpec.single(1)))
    grid = [-0.5, -0.2, 0.0, 0.2, 0.5]
    ok, margin = sorted_growth_check(solve_family(fam, grid), grid, dirac64, fam.factor)
    assert ok and margin >= 0
    with pytest.raises(ValueError):
        sorted_growth_check(solve_family(fam, [0.1, 0.2]), [0.1, 0.2], dirac64, fam.factor)
