"""First-order splitting predictions, eigenvalue branch tracking and growth bounds."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .domains import ConformalFactor
from .eigensolve import DEFAULT_CLUSTER_TOL, Eigenspace, Spectrum, cluster, cluster_indices, solve_symmetric
from .operators import ConjugatedFamily, CovariantOperator, family_matrix
from .parallel import pmap

DEFAULT_EPS_GRID = (-0.5, -0.35, -0.2, -0.1, -0.05, -1e-2, -1e-3, 0.0, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, 0.5)
QUALITY_FLOOR = 0.7


@dataclass(frozen=True)
class FirstOrderMatrix:
    eigenspace: Eigenspace = field(repr=False)
    factor: ConformalFactor = field(repr=False)
    entries: np.ndarray
    predicted_slopes: np.ndarray
    rotation: np.ndarray = field(repr=False)  # columns: first-order eigenvectors in the eigenspace basis

    @property
    def spread(self) -> float:
        return float(self.predicted_slopes[-1] - self.predicted_slopes[0])

    def identity_deviation(self) -> float:
        """Distance of the matrix from the nearest multiple of the identity (max entry)."""
        m = self.entries
        return float(np.max(np.abs(m - np.trace(m) / m.shape[0] * np.eye(m.shape[0]))))


def first_order_matrix(eigenspace: Eigenspace, factor: ConformalFactor, operator: CovariantOperator, zero_tol: float = 1e-9) -> FirstOrderMatrix:
    """Projected first derivative ``2 eta lambda <f u_i, u_j>`` on an eigenspace.

    Its eigenvalues are the slopes at eps = 0 of the branches emanating from
    the eigenvalue. Zero eigenvalues are rejected: the kernel does not move
    under conformal deformation, so there is nothing to split.
    """
    lam = eigenspace.value
    if abs(lam) <= zero_tol:
        raise ValueError(
            f"eigenvalue {lam:.3e} is zero; the kernel is conformally invariant and is not perturbed"
        )
    f = operator.expand(factor.values)
    u = eigenspace.basis
    m = 2.0 * operator.eta * lam * (u.T @ ((eigenspace.weights * f)[:, None] * u))
    m = 0.5 * (m + m.T)
    slopes, rot = np.linalg.eigh(m)
    return FirstOrderMatrix(eigenspace, factor, m, slopes, rot)


@dataclass
class Branch:
    branch_id: int
    origin_cluster: int
    origin_value: float
    eps_grid: np.ndarray
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)  # (len(eps_grid), N)
    quality: np.ndarray
    predicted_slope: float | None = None

    @property
    def uncertain(self) -> bool:
        return bool(np.any(self.quality < QUALITY_FLOOR))

    def value_at(self, eps: float) -> float:
        idx = np.flatnonzero(np.isclose(self.eps_grid, eps, rtol=0, atol=1e-15))
        if not idx.size:
            raise KeyError(f"eps {eps} not on the branch grid")
        return float(self.values[idx[0]])

    def central_slope(self, step: float) -> float:
        return (self.value_at(step) - self.value_at(-step)) / (2.0 * step)


def _lowdin(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Symmetric orthonormalization; keeps vectors as close as possible to the input."""
    g = vectors.T @ (weights[:, None] * vectors)
    vals, rot = np.linalg.eigh(g)
    return vectors @ (rot @ np.diag(vals**-0.5) @ rot.T)


def _propagate(prev: np.ndarray, spec: Spectrum, cluster_tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match branch vectors ``prev`` (columns) to eigenvectors of ``spec``.

    Branches are assigned to eigenvalue groups (clustered at ``cluster_tol``)
    greedily by projection norm, largest first, respecting each group's
    multiplicity. Inside a group the new vectors are the orthonormalized
    projections of the previous ones, which is what makes persistent
    degeneracies trackable.
    """
    w = spec.weights
    groups = cluster_indices(spec.eigenvalues, cluster_tol)
    over = prev.T @ (w[:, None] * spec.eigenvectors)  # (b, N)
    b = prev.shape[1]
    score = np.stack([np.sqrt(np.sum(over[:, g] ** 2, axis=1)) for g in groups], axis=1)  # (b, G)
    order = np.argsort(-score, axis=None, kind="stable")
    capacity = [len(g) for g in groups]
    assigned = np.full(b, -1)
    for flat in order:
        i, gi = divmod(int(flat), len(groups))
        if assigned[i] >= 0 or capacity[gi] == 0:
            continue
        assigned[i] = gi
        capacity[gi] -= 1
        if np.all(assigned >= 0):
            break
    values = np.empty(b)
    vectors = np.empty_like(prev)
    quality = score[np.arange(b), assigned]
    for gi in np.unique(assigned):
        members = np.flatnonzero(assigned == gi)
        idx = groups[gi]
        y = spec.eigenvectors[:, idx]
        proj = y @ over[np.ix_(members, idx)].T
        if np.min(np.linalg.norm(proj, axis=0)) < 1e-12:
            # nothing to project; fall back to the group eigenvectors themselves
            proj = y[:, : len(members)]
        vecs = _lowdin(proj, w)
        vectors[:, members] = vecs
        # hand out the group's eigenvalues in Rayleigh-quotient order
        coef = y.T @ (w[:, None] * vecs)
        rq = spec.eigenvalues[idx] @ (coef**2)
        vals = list(np.sort(spec.eigenvalues[idx]))
        for m in members[np.argsort(rq, kind="stable")]:
            if len(members) == len(idx):
                values[m] = vals.pop(0)
            else:
                j = int(np.argmin(np.abs(np.array(vals) - rq[list(members).index(m)])))
                values[m] = vals.pop(j)
    return values, vectors, quality


def solve_family(family: ConjugatedFamily, eps_values, method: str = "lapack") -> list[Spectrum]:
    rank = family.operator.rank

    def one(eps: float) -> Spectrum:
        return solve_symmetric(family_matrix(family, eps), family.weights, method=method, rank=rank)

    return pmap(one, list(eps_values))


def track_branches(
    family: ConjugatedFamily,
    eps_grid=DEFAULT_EPS_GRID,
    window: tuple[float, float] = (-math.inf, math.inf),
    *,
    include_kernel: bool = False,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
    zero_tol: float | None = None,
    spectra: list[Spectrum] | None = None,
) -> list[Branch]:
    """Continue every eigenvalue starting in ``window`` across ``eps_grid``.

    Degenerate clusters at eps = 0 are seeded with the first-order eigenvectors
    so that each branch has a well defined slope. Matching between grid points
    uses eigenvector overlap; matches below the quality floor are kept but the
    branch reports ``uncertain``.
    """
    grid = np.array(sorted(set(float(e) for e in eps_grid)))
    if 0.0 not in grid:
        raise ValueError("eps_grid must contain 0")
    lo, hi = window
    if lo > hi:
        raise ValueError("window must satisfy lo <= hi")
    if spectra is None:
        spectra = solve_family(family, grid)
    i0 = int(np.flatnonzero(grid == 0.0)[0])
    base = spectra[i0]
    ztol = zero_tol if zero_tol is not None else 1e-9 * base.scale

    seeds = []
    for es in cluster(base, cluster_tol):
        if not (lo <= es.value <= hi):
            continue
        if abs(es.value) <= ztol:
            if not include_kernel:
                continue
            seeds.append((es, es.basis, [0.0] * es.multiplicity))
            continue
        fo = first_order_matrix(es, family.factor, family.operator, zero_tol=ztol)
        seeds.append((es, es.basis @ fo.rotation, list(fo.predicted_slopes)))

    if not seeds:
        return []
    seed_vecs = np.column_stack([v for _, v, _ in seeds])
    b = seed_vecs.shape[1]
    n_eps = len(grid)
    values = np.empty((n_eps, b))
    vectors = np.empty((n_eps, b, seed_vecs.shape[0]))
    quality = np.ones((n_eps, b))
    # slopes come out ascending, so sorted solver values line up with them
    values[i0] = np.concatenate([np.sort(es.eigenvalues) for es, _, _ in seeds])
    vectors[i0] = seed_vecs.T

    for direction in (1, -1):
        prev = seed_vecs
        k = i0 + direction
        while 0 <= k < n_eps:
            vals, vecs, qual = _propagate(prev, spectra[k], cluster_tol)
            values[k], vectors[k], quality[k] = vals, vecs.T, qual
            prev = vecs
            k += direction

    branches = []
    col = 0
    for es, _, slopes in seeds:
        for j in range(es.multiplicity):
            branches.append(
                Branch(
                    branch_id=col,
                    origin_cluster=es.cluster_id,
                    origin_value=float(es.value),
                    eps_grid=grid,
                    values=values[:, col].copy(),
                    vectors=vectors[:, col, :].copy(),
                    quality=quality[:, col].copy(),
                    predicted_slope=float(slopes[j]),
                )
            )
            col += 1
    return branches


def growth_envelope(value: float, eta: float, sup_norm: float, eps) -> np.ndarray:
    """|lambda| (e^{2 |eta| ||f|| |eps|} - 1)."""
    return abs(value) * np.expm1(2.0 * abs(eta) * sup_norm * np.abs(np.asarray(eps, dtype=float)))


@dataclass
class GrowthReport:
    origin_value: float
    eps: np.ndarray
    deviation: np.ndarray
    bound: np.ndarray
    margin: np.ndarray
    passed: bool


def growth_bound_check(branch: Branch, operator: CovariantOperator, factor: ConformalFactor, slack: float | None = None) -> GrowthReport:
    """Check |lambda(eps) - lambda| <= |lambda| (e^{2|eta| ||f|| |eps|} - 1) on the grid.

    ``slack`` defaults to 1e-8 (1 + |lambda|).
    """
    lam = branch.origin_value
    if slack is None:
        slack = 1e-8 * (1.0 + abs(lam))
    dev = np.abs(branch.values - lam)
    bound = growth_envelope(lam, operator.eta, factor.sup_norm, branch.eps_grid)
    margin = bound + slack - dev
    return GrowthReport(lam, branch.eps_grid, dev, bound, margin, bool(np.all(margin >= 0)))


def sorted_growth_check(spectra: list[Spectrum], eps_grid, operator: CovariantOperator, factor: ConformalFactor,
                        slack: float | None = None) -> tuple[bool, float]:
    """Growth bound on the k-th sorted eigenvalue, needing no branch matching.

    Returns (passed, minimum margin). ``slack`` defaults to 1e-8 (1 + |lambda|) per entry.
    """
    eps = np.asarray(eps_grid, dtype=float)
    base = spectra[int(np.argmin(np.abs(eps)))].eigenvalues
    if eps[int(np.argmin(np.abs(eps)))] != 0:
        raise ValueError("eps_grid must contain 0")
    worst = math.inf
    for e, spec in zip(eps, spectra):
        dev = np.abs(spec.eigenvalues - base)
        bound = np.abs(base) * math.expm1(2.0 * abs(operator.eta) * factor.sup_norm * abs(e))
        tol = 1e-8 * (1.0 + np.abs(base)) if slack is None else slack
        worst = min(worst, float(np.min(bound + tol - dev)))
    return worst >= 0, worst


def no_crossing_radius(lower: float, upper: float, eta: float, sup_norm: float) -> float:
    """Largest |eps| for which the growth envelopes of two positive eigenvalues cannot meet.

    Solves ``lower e^{2|eta| s eps} = upper e^{-2|eta| s eps}``.
    """
    if not 0 < lower < upper:
        raise ValueError("need 0 < lower < upper")
    return math.log(upper / lower) / (4.0 * abs(eta) * sup_norm)


def kernel_dimension(spectrum: Spectrum, zero_tol: float | None = None) -> int:
    tol = zero_tol if zero_tol is not None else 1e-9 * spectrum.scale
    if tol <= 0:
        raise ValueError("zero_tol must be positive")
    return int(np.count_nonzero(np.abs(spectrum.eigenvalues) <= tol))


def measured_slopes(branches: list[Branch], step: float = 1e-3) -> dict[int, np.ndarray]:
    """Sorted central-difference slopes per origin cluster."""
    out: dict[int, list[float]] = {}
    for br in branches:
        out.setdefault(br.origin_cluster, []).append(br.central_slope(step))
    return {k: np.sort(v) for k, v in out.items()}


def slope_report(branches: list[Branch], step: float = 1e-3) -> dict:
    """Predicted vs measured slopes per origin eigenvalue (JSON-ready)."""
    clusters: dict[int, list[Branch]] = {}
    for br in branches:
        clusters.setdefault(br.origin_cluster, []).append(br)
    rows = []
    for cid, brs in clusters.items():
        predicted = sorted(b.predicted_slope for b in brs)
        measured = sorted(b.central_slope(step) for b in brs)
        rows.append({
            "cluster_id": cid,
            "value": brs[0].origin_value,
            "multiplicity": len(brs),
            "predicted": predicted,
            "measured": measured,
            "max_abs_error": max(abs(p - m) for p, m in zip(predicted, measured)),
        })
    return {"schema": 1, "step": step, "clusters": rows}


def branches_csv(branches: list[Branch]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eps", "branch_id", "value", "overlap_quality"])
    for br in branches:
        for e, v, q in zip(br.eps_grid, br.values, br.quality):
            writer.writerow([f"{e:.17g}", br.branch_id, f"{v:.17g}", f"{q:.17g}"])
    return buf.getvalue()
