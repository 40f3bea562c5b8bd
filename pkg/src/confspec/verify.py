"""Acceptance battery: analytic oracles, bound checks and invariants on the shipped instances.

Each criterion is a function ``(config) -> (passed, detail)``. The CLI
``verify`` command and the acceptance tests run the same battery.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .config import RunConfig
from .domains import FactorSpec, make_domain, make_factor
from .eigensolve import cluster, cluster_indices, solve_generalized, solve_symmetric
from .operators import (Bidegree, ConjugatedFamily, conformal_laplacian_torus, dirac_circle,
                        family_matrix, synthetic_power)
from .perturb import DEFAULT_EPS_GRID, first_order_matrix, growth_bound_check, kernel_dimension, solve_family, track_branches
from .splitter import RIGID, find_splitting_factor, genericity_loop, replay_plan, rigidity_score
from .windows import SpectralWindow, continuity_check, window_stability

BACKENDS = ("lapack", "ql", "jacobi")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d}. {self.title}: {self.detail} ({self.seconds:.2f} s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "detail": self.detail, "seconds": self.seconds}


def _torus(n: int = 16):
    return conformal_laplacian_torus(make_domain("torus2", n))


def _dirac(n: int = 64, spin: str = "antiperiodic"):
    return dirac_circle(make_domain("circle", n), spin)


def _family(op, spec: FactorSpec) -> ConjugatedFamily:
    return ConjugatedFamily(op, make_factor(op.domain, spec))


def _cluster_counts(vals: np.ndarray, tol: float) -> list[tuple[float, int]]:
    return [(float(np.mean(vals[g])), len(g)) for g in cluster_indices(vals, tol)]


# ------------------------------------------------------------------ criteria


def exact_background_spectra(cfg: RunConfig) -> tuple[bool, str]:
    t0 = time.perf_counter()
    tol = cfg.tolerances.cluster_tol
    op = _torus(16)
    vals = solve_symmetric(op.background_matrix, op.weights).eigenvalues
    k = np.fft.fftfreq(16, 1.0 / 16)
    exact = np.sort((k[:, None] ** 2 + k[None, :] ** 2).ravel())
    err_t = float(np.max(np.abs(vals - exact)))
    mult = _cluster_counts(vals, tol)[:5]
    mult_ok = [(round(v, 9), m) for v, m in mult] == [(0.0, 1), (1.0, 4), (2.0, 4), (4.0, 4), (5.0, 8)]
    dop = _dirac(64)
    dvals = solve_symmetric(dop.background_matrix, dop.weights, rank=2).eigenvalues
    dexact = np.sort(np.repeat(np.arange(-32, 32) + 0.5, 2))
    err_d = float(np.max(np.abs(dvals - dexact)))
    dmult_ok = all(m == 2 for _, m in _cluster_counts(dvals, tol))
    secs = time.perf_counter() - t0
    ok = err_t <= 1e-10 and err_d <= 1e-10 and mult_ok and dmult_ok and secs < 5.0
    return ok, (f"torus max err {err_t:.2e}, multiplicities {'ok' if mult_ok else [m for _, m in mult]}; "
                f"dirac max err {err_d:.2e}, all x2 {dmult_ok}")


def isospectrality(cfg: RunConfig) -> tuple[bool, str]:
    op = _torus(16)
    fam = _family(op, FactorSpec.single(2))
    eps = 0.1
    conj = solve_symmetric(family_matrix(fam, eps), op.weights).eigenvalues
    direct = solve_generalized(op.background_matrix, np.exp(eps * fam.factor.values), op.weights).eigenvalues
    err = float(np.max(np.abs(conj - direct)))
    return err <= 1e-10, f"max |conjugated - generalized| = {err:.2e}"


def dirac_length(eps: float) -> float:
    """Length of the circle under e^{eps cos(theta)} d theta^2, via the Bessel series."""
    return 2.0 * math.pi * float(np.i0(eps / 2.0))


def dirac_oracle(cfg: RunConfig) -> tuple[bool, str]:
    op = _dirac(256)
    eps = 0.4
    fam = _family(op, FactorSpec.single(1))
    vals = solve_symmetric(family_matrix(fam, eps), op.weights, rank=2).eigenvalues
    scale = 2.0 * math.pi / dirac_length(eps)
    modes = vals / scale - 0.5
    sel = np.abs(vals) < 20 * scale
    ks = np.round(modes[sel])
    expected = scale * (ks + 0.5)
    rel = float(np.max(np.abs(vals[sel] - expected) / np.abs(expected)))
    # every mode k in range must appear exactly twice
    mult = _cluster_counts(vals[sel], cfg.tolerances.cluster_tol)
    mult_ok = all(m == 2 for _, m in mult) and len(mult) == len(set(ks.tolist()))
    return rel <= 1e-8 and mult_ok, f"{int(sel.sum())} eigenvalues, max rel err {rel:.2e}, multiplicity 2 each {mult_ok}"


def slope_oracle_matrix(n: int = 64) -> np.ndarray:
    """First-order matrix for torus lambda = 1, f = cos 2x from analytic eigenfunctions on an n x n grid."""
    ax = 2.0 * math.pi * np.arange(n) / n
    x, y = np.meshgrid(ax, ax, indexing="ij")
    basis = [np.cos(x), np.sin(x), np.cos(y), np.sin(y)]
    w = (2.0 * math.pi / n) ** 2
    norms = [math.sqrt(w * np.sum(b * b)) for b in basis]
    f = np.cos(2 * x)
    eta, lam = -0.5, 1.0
    return np.array([[2 * eta * lam * w * np.sum(f * bi * bj) / (ni * nj) for bj, nj in zip(basis, norms)]
                     for bi, ni in zip(basis, norms)])


def first_order_slopes(cfg: RunConfig) -> tuple[bool, str]:
    op = _torus(16)
    fam = _family(op, FactorSpec.single(2))
    spec = solve_symmetric(op.background_matrix, op.weights)
    es = next(e for e in cluster(spec, cfg.tolerances.cluster_tol) if abs(e.value - 1.0) < 0.5)
    predicted = first_order_matrix(es, fam.factor, op).predicted_slopes
    oracle = np.linalg.eigvalsh(slope_oracle_matrix())
    err_oracle = float(np.max(np.abs(np.sort(predicted) - oracle))) if predicted.size == 4 else math.inf
    steps = (1e-3, 5e-4)
    grid = sorted({0.0, *steps, *(-s for s in steps)})
    branches = track_branches(fam, grid, window=(0.5, 1.5), cluster_tol=cfg.tolerances.cluster_tol)
    errs = []
    for h in steps:
        measured = np.sort([b.central_slope(h) for b in branches])
        pred = np.sort([b.predicted_slope for b in branches])
        errs.append(float(np.max(np.abs(measured - pred))) if len(measured) == 4 else math.inf)
    # central differences converge at second order, so halving must at least halve the error
    halves = errs[1] <= 0.5 * errs[0] + 1e-12
    ok = err_oracle <= 1e-10 and errs[0] <= 1e-4 and halves
    return ok, (f"slopes {np.round(np.sort(predicted), 12).tolist()}, oracle err {err_oracle:.2e}, "
                f"FD err h=1e-3 {errs[0]:.2e}, h=5e-4 {errs[1]:.2e}")


def growth_instances():
    torus = _torus(16)
    return [
        ("torus cos2x", torus, FactorSpec.single(2), (0.5, 20.5)),
        ("dirac cos", _dirac(64), FactorSpec.single(1), (-10.0, 10.0)),
        ("torus^2 bidegree (0,4)", synthetic_power(torus, 2, Bidegree(0.0, 4.0)), FactorSpec.single(2), (0.5, 30.0)),
    ]


def growth_bound(cfg: RunConfig) -> tuple[bool, str]:
    parts = []
    ok = True
    for name, op, spec, win in growth_instances():
        fam = _family(op, spec)
        branches = track_branches(fam, DEFAULT_EPS_GRID, window=win, cluster_tol=cfg.tolerances.cluster_tol)
        reports = [growth_bound_check(b, op, fam.factor, slack=1e-8) for b in branches]
        worst = min(float(np.min(r.margin[r.eps != 0])) for r in reports)
        passed = bool(branches) and all(r.passed for r in reports)
        ok &= passed
        parts.append(f"{name}: {len(branches)} branches, min margin (eps != 0) {worst:.2e}")
    return ok, "; ".join(parts)


def kernel_invariance(cfg: RunConfig) -> tuple[bool, str]:
    cases = [
        ("torus cos2x", _torus(16), FactorSpec.single(2), 1),
        ("torus const", _torus(16), FactorSpec.constant(1.0), 1),
        ("torus cos(x+y)", _torus(16), FactorSpec.single(1, 1), 1),
        ("periodic dirac cos", _dirac(64, "periodic"), FactorSpec.single(1), 2),
        ("periodic dirac sin2", _dirac(64, "periodic"), FactorSpec.single(2, phase="sin"), 2),
    ]
    parts = []
    ok = True
    for name, op, spec, expected in cases:
        dims = [kernel_dimension(s, cfg.tolerances.zero_tol) for s in solve_family(_family(op, spec), DEFAULT_EPS_GRID)]
        ok &= all(d == expected for d in dims)
        parts.append(f"{name} {sorted(set(dims))}")
    return ok, "; ".join(parts)


def rigidity_dichotomy(cfg: RunConfig) -> tuple[bool, str]:
    tol = cfg.tolerances.cluster_tol
    dop = _dirac(64)
    dspec = solve_symmetric(dop.background_matrix, dop.weights, rank=2)
    worst_score = worst_dev = 0.0
    n = 0
    for es in cluster(dspec, tol):
        if abs(es.value) > 5.0 or es.multiplicity < 2:
            continue
        n += 1
        search = find_splitting_factor(es, dop)
        worst_score = max(worst_score, search.rigidity.score)
        worst_dev = max(worst_dev, max(fo.identity_deviation() for fo in search.first_orders))
    dirac_ok = n > 0 and worst_score <= 1e-10 and worst_dev <= 1e-10
    top = _torus(16)
    tspec = solve_symmetric(top.background_matrix, top.weights)
    es = next(e for e in cluster(tspec, tol) if abs(e.value - 1.0) < 0.5)
    rep = rigidity_score(es)
    search = find_splitting_factor(es, top)
    torus_ok = rep.normalized_score >= 0.01 and search.spread >= 0.99 and rep.verdict != RIGID
    return dirac_ok and torus_ok, (f"dirac {n} clusters, max score {worst_score:.2e}, max |M - cI| {worst_dev:.2e}; "
                                   f"torus lambda=1 normalized score {rep.normalized_score:.3f}, "
                                   f"best spread {search.spread:.3f} ({search.factor.description if search.factor else '-'})")


def genericity(cfg: RunConfig) -> tuple[bool, str]:
    t0 = time.perf_counter()
    op = _torus(24)
    gamma = cfg.tolerances.gamma
    plan = genericity_loop(op, 4.5, gamma, max_steps=cfg.max_steps, zero_tol=cfg.tolerances.zero_tol,
                           spread_tol=cfg.tolerances.spread_tol)
    secs = time.perf_counter() - t0
    w = np.sort(plan.window_eigenvalues)
    rel_gaps = np.diff(w) / np.maximum(1.0, np.maximum(np.abs(w[:-1]), np.abs(w[1:])))
    simple = len(w) == 12 and bool(np.all(rel_gaps >= gamma))
    # replay every prefix: no eigenvalue simple before a step may merge after it
    remerge = False
    steps = [(s.factor_spec, s.epsilon) for s in plan.steps]
    ztol = 1e-9 * 576
    prev = solve_symmetric(op.background_matrix, op.weights).eigenvalues
    for j in range(1, len(steps) + 1):
        cur = replay_plan(op, steps[:j]).eigenvalues
        new_groups = {tuple(g) for g in cluster_indices(cur, gamma)}
        for g in cluster_indices(prev, gamma):
            if len(g) == 1 and ztol < abs(prev[g[0]]) <= 4.5 and (g[0],) not in new_groups:
                remerge = True
        prev = cur
    ok = (plan.complete and len(plan.steps) <= 10 and simple and plan.kernel_dimension == 1
          and not remerge and secs < 60.0)
    return ok, (f"status {plan.status}, {len(plan.steps)} steps, {len(w)} window eigenvalues, "
                f"min rel gap {float(rel_gaps.min()) if rel_gaps.size else math.nan:.2e}, kernel {plan.kernel_dimension}, "
                f"re-merge {remerge}, under 60 s {secs < 60.0}")


def window_count_stability(cfg: RunConfig) -> tuple[bool, str]:
    op = _torus(16)
    window = SpectralWindow(0.5, 4.5, cfg.tolerances.guard)
    small = [e for e in DEFAULT_EPS_GRID if abs(e) <= 0.05]
    rep = window_stability(_family(op, FactorSpec.single(2)), window, small)
    const = bool(np.all(rep.counts == 12))
    rep1 = window_stability(_family(op, FactorSpec.constant(1.0)), window, DEFAULT_EPS_GRID)
    target = math.log(5 / 4.5)
    hits = [c for c in rep1.crossings if c.bracket[0] <= target <= c.bracket[1]]
    found = bool(hits) and abs(hits[0].refined - target) <= 1e-5
    return const and rep.passed and rep1.passed and found, (
        f"cos2x counts {sorted(set(rep.counts.tolist()))} for |eps|<=0.05; const factor crossing "
        f"{hits[0].bracket if hits else None} refined {hits[0].refined if hits else math.nan:.6f} vs {target:.6f}")


def continuity_envelope(cfg: RunConfig) -> tuple[bool, str]:
    op = _torus(16)
    parts = []
    ok = True
    for spec in (FactorSpec.single(2), FactorSpec.constant(1.0), FactorSpec.single(1, 1, "sin")):
        fam = _family(op, spec)
        fam_eta, sup = fam.eta, fam.factor.sup_norm
        rep = continuity_check(fam, 0.5, 12, DEFAULT_EPS_GRID)
        ok &= rep.passed
        nz = rep.eps != 0
        env = np.array([np.expm1(abs(fam_eta) * 2 * sup * np.abs(rep.eps[nz])) * abs(m) for m in rep.base_values])
        dev = np.abs(rep.values[nz] - rep.base_values[None, :]).T
        parts.append(f"{spec.describe()} min envelope-deviation {float(np.min(env - dev)):.2e}")
    return ok, "; ".join(parts)


def char_poly_exact(a: np.ndarray) -> list[Fraction]:
    """Characteristic polynomial coefficients (leading first) by Faddeev-LeVerrier in exact arithmetic."""
    n = a.shape[0]
    m = [[Fraction(float(v)) for v in row] for row in a]
    coeffs = [Fraction(1)]
    mk = [[Fraction(0)] * n for _ in range(n)]
    c = Fraction(1)
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{k-1} I ; c_k = -tr(A M_k)/k
        prod = [[sum(m[i][l] * mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        mk = [[prod[i][j] + (c if i == j else 0) for j in range(n)] for i in range(n)]
        am = [[sum(m[i][l] * mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        c = -sum(am[i][i] for i in range(n)) / k
        coeffs.append(c)
    return coeffs


def poly_real_roots(coeffs: list[Fraction], iters: int = 8) -> np.ndarray:
    """Companion-matrix seeds polished by Newton steps evaluated exactly."""
    seeds = np.sort(np.roots([float(c) for c in coeffs]).real)
    deriv = [c * (len(coeffs) - 1 - i) for i, c in enumerate(coeffs[:-1])]
    out = []
    for x in seeds:
        for _ in range(iters):
            fx = Fraction(float(x))
            p = sum(c * fx ** (len(coeffs) - 1 - i) for i, c in enumerate(coeffs))
            dp = sum(c * fx ** (len(deriv) - 1 - i) for i, c in enumerate(deriv))
            if dp == 0:
                break
            x = float(fx - p / dp)
        out.append(x)
    return np.sort(np.array(out))


def eigensolver_oracle(cfg: RunConfig) -> tuple[bool, str]:
    rng = np.random.default_rng(cfg.seed)
    worst_val = worst_res = 0.0
    for _ in range(50):
        b = rng.standard_normal((6, 6))
        a = 0.5 * (b + b.T)
        roots = poly_real_roots(char_poly_exact(a))
        for method in BACKENDS:
            spec = solve_symmetric(a, method=method)
            worst_val = max(worst_val, float(np.max(np.abs(spec.eigenvalues - roots))))
            v = spec.eigenvectors
            worst_res = max(worst_res, float(np.max(np.abs(v @ np.diag(spec.eigenvalues) @ v.T - a))))
    return worst_val <= 1e-9 and worst_res <= 1e-8, (
        f"50 matrices x {len(BACKENDS)} backends, max eigenvalue err {worst_val:.2e}, max reconstruction {worst_res:.2e}")


CRITERIA: list[tuple[int, str, Callable[[RunConfig], tuple[bool, str]]]] = [
    (1, "exact background spectra", exact_background_spectra),
    (2, "isospectrality of the conjugated family", isospectrality),
    (3, "Dirac deformation oracle", dirac_oracle),
    (4, "first-order slopes", first_order_slopes),
    (5, "growth bound", growth_bound),
    (6, "kernel invariance", kernel_invariance),
    (7, "rigidity dichotomy", rigidity_dichotomy),
    (8, "genericity loop", genericity),
    (9, "window count stability", window_count_stability),
    (10, "continuity envelope", continuity_envelope),
    (11, "eigensolver oracle", eigensolver_oracle),
]


def run_criterion(number: int, cfg: RunConfig | None = None) -> CriterionResult:
    cfg = cfg or RunConfig()
    num, title, fn = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    try:
        passed, detail = fn(cfg)
    except Exception as exc:  # a crash is a failed criterion, reported by name
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CriterionResult(num, title, bool(passed), detail, time.perf_counter() - t0)


def run_battery(cfg: RunConfig | None = None, only: list[int] | None = None) -> list[CriterionResult]:
    return [run_criterion(num, cfg) for num, _, _ in CRITERIA if only is None or num in only]
