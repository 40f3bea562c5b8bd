"""Rigidity detection, splitting-factor search and the finite-step genericity loop.

An eigenspace of dimension >= 2 is rigid when every unit eigensection has the
same pointwise norm function, i.e. the pointwise Gram matrix of an orthonormal
basis is a scalar multiple of the identity at every node. For a non-rigid
eigenspace some conformal factor f makes the first-order matrix
``2 eta lambda <f u_i, u_j>`` differ from a multiple of the identity, which
splits the eigenvalue under e^{eps f} g for small eps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .domains import ConformalFactor, FactorSpec, candidate_modes, make_factor
from .eigensolve import Eigenspace, Spectrum, cluster, cluster_indices, solve_symmetric
from .operators import CovariantOperator
from .parallel import pmap
from .perturb import FirstOrderMatrix, first_order_matrix, kernel_dimension

log = logging.getLogger(__name__)

RIGID = "rigid"
SPLITTABLE = "splittable"
TRIVIAL = "splittable-trivially"


@dataclass(frozen=True)
class RigidityReport:
    value: float
    multiplicity: int
    score: float
    normalized_score: float
    threshold: float
    verdict: str
    gram_samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "multiplicity": self.multiplicity,
            "score": None if math.isinf(self.score) else self.score,
            "normalized_score": None if math.isinf(self.normalized_score) else self.normalized_score,
            "threshold": self.threshold,
            "verdict": self.verdict,
        }


def pointwise_gram(eigenspace: Eigenspace) -> np.ndarray:
    """G(x)_ij = (u_i(x), u_j(x)) for every node; shape (n_nodes, l, l)."""
    u = eigenspace.basis  # (rank * n_nodes, l)
    n_nodes = u.shape[0] // eigenspace.rank
    comp = u.reshape(eigenspace.rank, n_nodes, u.shape[1])
    return np.einsum("rxi,rxj->xij", comp, comp)


def rigidity_score(eigenspace: Eigenspace, threshold_rel: float = 1e-6, keep_samples: int = 0) -> RigidityReport:
    """Max over nodes of ||G(x) - tr G(x)/l * I||_F.

    The verdict is rigid when the score is at most ``threshold_rel`` times
    the mean trace of G. Multiplicity-one spaces get an infinite score and
    the trivial verdict.
    """
    ell = eigenspace.multiplicity
    if ell < 2:
        return RigidityReport(eigenspace.value, ell, math.inf, math.inf, math.nan, TRIVIAL)
    g = pointwise_gram(eigenspace)
    tr = np.trace(g, axis1=1, axis2=2)
    dev = g - (tr / ell)[:, None, None] * np.eye(ell)[None]
    score = float(np.max(np.sqrt(np.sum(dev**2, axis=(1, 2)))))
    mean_tr = float(np.mean(tr))
    threshold = threshold_rel * mean_tr
    samples = g[:: max(1, g.shape[0] // keep_samples)] if keep_samples else None
    return RigidityReport(
        eigenspace.value, ell, score, score / mean_tr, threshold,
        RIGID if score <= threshold else SPLITTABLE, samples,
    )


@dataclass
class SplitSearch:
    status: str  # "split" | "rigid" | "unsplittable"
    factor: ConformalFactor | None
    first_order: FirstOrderMatrix | None
    spread: float
    rigidity: RigidityReport
    spreads: list[tuple[str, float]] = field(default_factory=list, repr=False)
    first_orders: list[FirstOrderMatrix] = field(default_factory=list, repr=False)


def find_splitting_factor(
    eigenspace: Eigenspace,
    operator: CovariantOperator,
    candidate_specs: Sequence[FactorSpec] | None = None,
    spread_tol: float | None = None,
    max_mode: int = 4,
) -> SplitSearch:
    """Pick the candidate factor with the widest first-order slope spread.

    Ties (within 1e-9 relative) go to the earlier candidate. If no candidate
    spreads the slopes beyond ``spread_tol`` (default 1e-9 |lambda|), the
    result carries the rigidity report and status "rigid" or "unsplittable".
    """
    if candidate_specs is None:
        candidate_specs = candidate_modes(operator.domain, max_mode)
    if not candidate_specs:
        raise ValueError("empty candidate set")
    lam = eigenspace.value
    if spread_tol is None:
        spread_tol = 1e-9 * abs(lam)
    rigidity = rigidity_score(eigenspace)
    best: tuple[float, ConformalFactor, FirstOrderMatrix] | None = None
    spreads = []
    fos = []
    for spec in candidate_specs:
        factor = make_factor(operator.domain, spec)
        fo = first_order_matrix(eigenspace, factor, operator)
        spreads.append((factor.description, fo.spread))
        fos.append(fo)
        if best is None or fo.spread > best[0] * (1.0 + 1e-9) + 1e-300:
            best = (fo.spread, factor, fo)
    assert best is not None
    if best[0] <= spread_tol:
        status = RIGID if rigidity.verdict == RIGID else "unsplittable"
        return SplitSearch(status, None, None, best[0], rigidity, spreads, fos)
    return SplitSearch("split", best[1], best[2], best[0], rigidity, spreads, fos)


def epsilon_budget(cluster_layout: Sequence[tuple[float, float]], factor_sup_norm: float, eta: float) -> float:
    """Largest eps keeping every eigenvalue inside its safety radius.

    ``cluster_layout`` lists ``(lambda, d)`` pairs: eigenvalue ``lambda`` must
    stay within ``d`` of itself. With the growth envelope
    ``|lambda| (e^{2|eta| ||f|| eps} - 1) <= d`` the budget is
    ``min log(1 + d/|lambda|) / (2 |eta| ||f||)``. Zero eigenvalues never move
    and impose nothing.
    """
    if factor_sup_norm <= 0 or eta == 0:
        raise ValueError("factor sup-norm and eta must be nonzero")
    best = math.inf
    for lam, d in cluster_layout:
        if d <= 0:
            raise ValueError(f"nonpositive safety radius {d} at eigenvalue {lam}")
        if lam == 0:
            continue
        best = min(best, math.log1p(d / abs(lam)) / (2.0 * abs(eta) * factor_sup_norm))
    return best


def safety_layout(eigenvalues: np.ndarray, alpha: float, gamma: float, zero_tol: float) -> tuple[list[tuple[float, float]], dict[int, float]]:
    """Safety radii for every nonzero eigenvalue that matters for the window.

    Eigenvalues are grouped at relative tolerance ``gamma``; each group keeps
    at least a gamma-sized gap to its neighbours (half the remaining gap each),
    window members stay inside [-alpha, alpha], and the nearest outside
    eigenvalues on either side (the guards) stay outside.
    """
    vals = np.asarray(eigenvalues)
    groups = [g for g in cluster_indices(vals, gamma) if abs(np.mean(vals[g])) > zero_tol]
    inside = [gi for gi, g in enumerate(groups) if np.all(np.abs(vals[g]) <= alpha)]
    keep = set(inside)
    above = [gi for gi, g in enumerate(groups) if np.min(vals[g]) > alpha]
    below = [gi for gi, g in enumerate(groups) if np.max(vals[g]) < -alpha]
    if above:
        keep.add(above[0])
    if below:
        keep.add(below[-1])
    radii: dict[int, float] = {}
    for gi in sorted(keep):
        g = groups[gi]
        lo, hi = float(np.min(vals[g])), float(np.max(vals[g]))
        d = math.inf
        if gi > 0:
            nb = float(np.max(vals[groups[gi - 1]]))
            d = min(d, 0.5 * (lo - nb - gamma * max(1.0, abs(lo), abs(nb))))
        if gi + 1 < len(groups):
            nb = float(np.min(vals[groups[gi + 1]]))
            d = min(d, 0.5 * (nb - hi - gamma * max(1.0, abs(hi), abs(nb))))
        if gi in inside:
            d = min(d, alpha - max(abs(lo), abs(hi)))
        else:
            d = min(d, min(abs(lo), abs(hi)) - alpha)
        for i in g:
            radii[i] = d
    layout = [(float(vals[i]), d) for i, d in sorted(radii.items())]
    return layout, radii


@dataclass
class SplitStep:
    factor_spec: FactorSpec
    epsilon: float
    target_value: float
    target_multiplicity: int
    predicted_slopes: list[float]
    budget: float
    degeneracy_before: int
    degeneracy_after: int
    certified: bool = True  # eps within the a priori half budget

    def to_dict(self) -> dict[str, Any]:
        return {
            "factor": self.factor_spec.to_dict(),
            "epsilon": self.epsilon,
            "target_value": self.target_value,
            "target_multiplicity": self.target_multiplicity,
            "predicted_slopes": list(self.predicted_slopes),
            "budget": self.budget,
            "degeneracy_before": self.degeneracy_before,
            "degeneracy_after": self.degeneracy_after,
            "certified": self.certified,
        }


@dataclass
class SplitPlan:
    alpha: float
    gamma: float
    steps: list[SplitStep]
    status: str  # "complete" | "rigid" | "irreducible" | "exhausted"
    window_eigenvalues: np.ndarray
    kernel_dimension: int
    verdicts: list[dict[str, Any]]
    final_spectrum: Spectrum | None = field(default=None, repr=False)
    log_lines: list[str] = field(default_factory=list, repr=False)

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": 1,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "status": self.status,
            "steps": [s.to_dict() for s in self.steps],
            "final_spectrum": {
                "window_eigenvalues": [float(v) for v in self.window_eigenvalues],
                "count": int(len(self.window_eigenvalues)),
                "kernel_dimension": self.kernel_dimension,
            },
            "verdicts": self.verdicts,
        }


def composite_matrix(operator: CovariantOperator, exponent_nodes: np.ndarray) -> np.ndarray:
    """E P E with E = diag(e^{eta F}) for an accumulated conformal exponent F."""
    e = np.exp(operator.expand(operator.eta * exponent_nodes))
    return e[:, None] * operator.background_matrix * e[None, :]


def accumulate_exponent(operator: CovariantOperator, steps: Sequence[tuple[FactorSpec, float]]) -> np.ndarray:
    exponent = np.zeros(operator.domain.n_nodes)
    for spec, eps in steps:
        exponent = exponent + eps * make_factor(operator.domain, spec).values
    return exponent


def _window_degeneracy(vals: np.ndarray, alpha: float, gamma: float, zero_tol: float) -> int:
    return sum(len(g) - 1 for g in cluster_indices(vals, gamma)
               if abs(np.mean(vals[g])) > zero_tol and np.all(np.abs(vals[g]) <= alpha))


def _window_values(vals: np.ndarray, alpha: float, zero_tol: float) -> np.ndarray:
    return vals[(np.abs(vals) <= alpha) & (np.abs(vals) > zero_tol)]


def genericity_loop(
    operator: CovariantOperator,
    alpha: float,
    gamma: float = 1e-3,
    max_steps: int = 10,
    *,
    max_mode: int = 4,
    escalated_mode: int = 8,
    safety: float = 0.5,
    n_trials: int = 16,
    max_eps: float = 0.25,
    zero_tol: float | None = None,
    spread_tol: float | None = None,
) -> SplitPlan:
    """Split every degenerate nonzero eigenvalue in [-alpha, alpha] in finitely many steps.

    Each step takes the most degenerate cluster (ties: smallest |lambda|),
    finds the factor with the widest slope spread, and deforms by half the
    eps budget that keeps all safety intervals disjoint and the window
    population fixed. The deformed operator becomes the new background; the
    conformal exponents simply add up.

    The eps actually used comes from a geometric ladder topped by the larger
    of that half budget and ``max_eps``. Among the rungs that reduce the
    degeneracy, the one leaving the widest relative gap between distinct
    clusters wins; gaps barely above gamma would otherwise shrink every
    later budget to nothing. Rungs inside the half budget are certified and
    must pass every invariant including the safety radii. Larger rungs are
    accepted only after the kernel, window population and no-merge checks
    pass on the computed spectrum, and are marked ``certified=False``.
    """
    if alpha <= 0 or gamma <= 0:
        raise ValueError("alpha and gamma must be positive")
    w = operator.weights
    rank = operator.rank
    exponent = np.zeros(operator.domain.n_nodes)
    spec = solve_symmetric(operator.background_matrix, w, rank=rank)
    ztol = zero_tol if zero_tol is not None else 1e-9 * spec.scale
    kdim = kernel_dimension(spec, ztol)
    steps: list[SplitStep] = []
    lines: list[str] = []
    verdicts: list[dict[str, Any]] = []
    irreducible: set[float] = set()
    status = "complete"

    def emit(msg: str) -> None:
        lines.append(msg)
        log.info(msg)

    while True:
        vals = spec.eigenvalues
        degen = _window_degeneracy(vals, alpha, gamma, ztol)
        if degen == 0:
            emit(f"window [-{alpha}, {alpha}] has only simple nonzero eigenvalues")
            break
        if len(steps) >= max_steps:
            status = "exhausted"
            emit(f"max_steps={max_steps} reached with degeneracy {degen}")
            break
        current = CovariantOperator(operator.name, operator.bidegree, rank, operator.order,
                                    composite_matrix(operator, exponent), operator.domain)
        targets = [es for es in cluster(spec, gamma)
                   if es.multiplicity > 1 and abs(es.value) > ztol and np.all(np.abs(es.eigenvalues) <= alpha)
                   and round(es.value, 9) not in irreducible]
        targets.sort(key=lambda es: (-es.multiplicity, abs(es.value), es.value))
        step_taken = False
        for target in targets:
            search = find_splitting_factor(target, current, spread_tol=spread_tol, max_mode=max_mode)
            if search.status != "split" and escalated_mode > max_mode:
                search = find_splitting_factor(target, current, spread_tol=spread_tol, max_mode=escalated_mode)
            if search.status != "split":
                emit(f"cluster {target.value:.12g} x{target.multiplicity}: {search.status} "
                     f"(rigidity score {search.rigidity.score:.3e})")
                verdicts.append({**search.rigidity.to_dict(), "status": search.status})
                irreducible.add(round(target.value, 9))
                continue
            layout, radii = safety_layout(vals, alpha, gamma, ztol)
            factor = search.factor
            budget = epsilon_budget(layout, factor.sup_norm, operator.eta)
            full = safety * min(budget, 1.0)
            scale = max(1.0, abs(target.value))
            top = max(full, max_eps)
            trials = [top * 2.0 ** (-j / 2) for j in range(n_trials)]
            trials = sorted({e for e in trials if e * search.spread > gamma * scale} | {full}, reverse=True)

            def evaluate(eps: float):
                ne = exponent + eps * factor.values
                sp = solve_symmetric(composite_matrix(operator, ne), w, rank=rank)
                certified = eps <= full
                try:
                    _check_step(vals, sp.eigenvalues, radii if certified else {}, alpha, gamma, ztol, kdim)
                except AssertionError:
                    if certified:
                        raise
                    return None
                nd = _window_degeneracy(sp.eigenvalues, alpha, gamma, ztol)
                return eps, ne, sp, nd, _separation_margin(sp.eigenvalues, alpha, gamma, ztol), certified

            results = pmap(evaluate, trials)
            good = [r for r in results if r is not None and r[3] < degen]
            if not good:
                emit(f"cluster {target.value:.12g}: split by {factor.description} stayed below gamma "
                     f"for eps in [{trials[-1]:.3e}, {trials[0]:.3e}]")
                verdicts.append({"value": target.value, "multiplicity": target.multiplicity,
                                 "status": "below-gamma", "spread": search.spread})
                irreducible.add(round(target.value, 9))
                continue
            # widest separation between distinct groups keeps later budgets usable
            eps, new_exponent, new_spec, new_degen, margin, certified = max(good, key=lambda r: (r[4], -r[3]))
            steps.append(SplitStep(factor.spec, eps, target.value, target.multiplicity,
                                   [float(s) for s in search.first_order.predicted_slopes],
                                   budget, degen, new_degen, certified))
            emit(f"step {len(steps)}: {factor.description} eps={eps:.6e} on {target.value:.12g} "
                 f"x{target.multiplicity}; degeneracy {degen} -> {new_degen}")
            exponent, spec = new_exponent, new_spec
            step_taken = True
            break
        if not step_taken:
            rigid_only = verdicts and all(v.get("status") == "rigid" for v in verdicts)
            status = "rigid" if rigid_only else "irreducible"
            emit("no remaining cluster can be split with the candidate factors")
            break

    return SplitPlan(alpha, gamma, steps, status, _window_values(spec.eigenvalues, alpha, ztol),
                     kernel_dimension(spec, ztol), verdicts, spec, lines)


def _check_step(old: np.ndarray, new: np.ndarray, radii: dict[int, float], alpha: float, gamma: float, zero_tol: float, kdim: int) -> None:
    """Post-step invariants: kernel, window population, simple stays simple, radii respected."""
    if kernel_dimension_values(new, zero_tol) != kdim:
        raise AssertionError("kernel dimension changed during a splitting step")
    if len(_window_values(old, alpha, zero_tol)) != len(_window_values(new, alpha, zero_tol)):
        raise AssertionError("window population changed during a splitting step")
    for i, d in radii.items():
        # sorted eigenvalues move inside their own envelopes, so index i is lambda_i(eps)
        if abs(new[i] - old[i]) > d * (1 + 1e-9):
            raise AssertionError(f"eigenvalue {old[i]} left its safety interval")
    old_groups = cluster_indices(old, gamma)
    new_groups = {tuple(g) for g in cluster_indices(new, gamma)}
    for g in old_groups:
        if len(g) == 1 and zero_tol < abs(old[g[0]]) <= alpha and (g[0],) not in new_groups:
            raise AssertionError(f"simple eigenvalue {old[g[0]]} merged with a neighbour")


def _separation_margin(vals: np.ndarray, alpha: float, gamma: float, zero_tol: float) -> float:
    """Smallest gap between distinct gamma-clusters near the window, in units of gamma * scale."""
    sel = np.sort(vals[(np.abs(vals) > zero_tol) & (np.abs(vals) <= 1.5 * alpha)])
    best = math.inf
    for a, b in zip(sel[:-1], sel[1:]):
        r = (b - a) / (gamma * max(1.0, abs(a), abs(b)))
        if r > 1.0:
            best = min(best, r)
    return best


def kernel_dimension_values(vals: np.ndarray, zero_tol: float) -> int:
    return int(np.count_nonzero(np.abs(vals) <= zero_tol))


def replay_plan(operator: CovariantOperator, steps: Sequence[tuple[FactorSpec, float]]) -> Spectrum:
    """Recompose a plan's deformation and return the final spectrum."""
    exponent = accumulate_exponent(operator, steps)
    return solve_symmetric(composite_matrix(operator, exponent), operator.weights, rank=operator.rank)


def plan_steps_from_dict(plan: dict[str, Any]) -> list[tuple[FactorSpec, float]]:
    return [(FactorSpec.parse(s["factor"]), float(s["epsilon"])) for s in plan["steps"]]
